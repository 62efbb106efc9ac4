"""Bilinear resampling between spherical rasters.

All warps here are single resampling passes: a composed transform must be
baked into one coordinate grid before sampling, never applied as a chain
of warps. The bilinear kernel below is the only interpolator in the
package; the autodiff grid sampler calls the same function so that both
paths are bit-identical in the forward direction.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .errors import DataError, NumericError
from .images import Cubemap, ErpGridSpec, ErpImage, InclinationAngles, Lut3D

# Coordinates this close to an integer pixel center are snapped onto it, so
# warps that are analytically the identity reproduce the input bit-exactly.
SNAP_EPS = 1e-9


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) <= SNAP_EPS, r, x)


def bilinear_kernel(img: np.ndarray, u: np.ndarray, v: np.ndarray, circular: bool):
    """Core gather shared by the plain and the differentiable samplers.

    Returns (out, aux) where aux carries the integer corner indices and
    weights needed for gradients. img is (C, H, W); u, v index columns and
    rows in the integer-pixel-center convention. Horizontal indexing wraps
    when circular, clamps otherwise; vertical indexing always clamps.
    """
    c, h, w = img.shape
    u = _snap(np.asarray(u, dtype=np.float64))
    v = _snap(np.asarray(v, dtype=np.float64))
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        # computed coordinates, not caller data: blame the numerics
        raise NumericError("non-finite sampling coordinates")

    x0 = np.floor(u)
    y0 = np.floor(v)
    wx = u - x0
    wy = v - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if circular:
        x0 %= w
        x1 %= w
    else:
        x0 = np.clip(x0, 0, w - 1)
        x1 = np.clip(x1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y1, 0, h - 1)

    w00 = (1.0 - wx) * (1.0 - wy)
    w01 = wx * (1.0 - wy)
    w10 = (1.0 - wx) * wy
    w11 = wx * wy
    out = (
        img[:, y0c, x0] * w00
        + img[:, y0c, x1] * w01
        + img[:, y1c, x0] * w10
        + img[:, y1c, x1] * w11
    )
    aux = (x0, x1, y0c, y1c, wx, wy)
    return out, aux


def bilinear_sample(img: np.ndarray, coords: np.ndarray, wrap: str = "circular") -> np.ndarray:
    """Sample img (C, H, W) at coords (2, Ho, Wo); coords[0] is u, coords[1] is v.

    Output values are convex combinations of input pixels, so an image in
    [0, 1] stays in [0, 1].
    """
    if wrap not in ("circular", "clamp"):
        raise DataError(f"unknown wrap mode {wrap!r}")
    coords = np.asarray(coords)
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise DataError(f"coords must be (2, Ho, Wo), got {coords.shape}")
    out, _ = bilinear_kernel(img, coords[0], coords[1], circular=(wrap == "circular"))
    return out


def _sample_erp(img: np.ndarray, dirs: np.ndarray, grid: ErpGridSpec) -> np.ndarray:
    u, v = geometry.sphere_to_erp_pixel(dirs, grid)
    out, _ = bilinear_kernel(img, u, v, circular=True)
    return out


def erp_to_cubemap(img: ErpImage, face_size: int) -> Cubemap:
    """Project an ERP image onto six cube faces of the given size."""
    if face_size < 2:
        raise DataError(f"face_size must be >= 2, got {face_size}")
    dirs = geometry.cube_direction_grid(face_size)
    faces = np.stack(
        [_sample_erp(img.data, dirs[f], img.grid) for f in range(6)]
    )
    return Cubemap(faces)


def cubemap_to_erp(cm: Cubemap, grid: ErpGridSpec) -> ErpImage:
    """Resample a cubemap back onto an ERP grid.

    Every output pixel reads from the single face that owns its direction;
    there is no cross-face blending, which leaves small seams at face
    borders (a known quality limit of the plain cube projection).
    """
    s = cm.face_size
    dirs = geometry.erp_direction_grid(grid)
    face, u, v = geometry.sphere_to_cube_pixel(dirs, s)
    # continuous [0, S) face coords -> integer-pixel-center convention
    u = u - 0.5
    v = v - 0.5
    c = cm.faces.shape[1]
    out = np.zeros((c, grid.height, grid.width), dtype=cm.faces.dtype)
    for f in range(6):
        m = face == f
        if not m.any():
            continue
        vals, _ = bilinear_kernel(cm.faces[f], u[m], v[m], circular=False)
        out[:, m] = vals
    return ErpImage(out)


def rotate_erp(img: ErpImage, angles: InclinationAngles) -> ErpImage:
    """Rotate image content by the tilt rotation R(pitch, roll).

    A feature at direction d in the input appears at R @ d in the output,
    i.e. out(d) = img(R^T d). Zero angles short-circuit to an exact copy.
    """
    p, r = geometry._angles(angles)
    if p == 0.0 and r == 0.0:
        return ErpImage(img.data.copy())
    rot = geometry.rotation_from_angles(angles)
    dirs = geometry.erp_direction_grid(img.grid)
    src = np.einsum("ji,jhw->ihw", rot, dirs)  # R^T @ d
    return ErpImage(_sample_erp(img.data, src, img.grid))


def apply_lut(img: ErpImage, lut: Lut3D) -> ErpImage:
    """Sample img at the sphere coordinate stored per output pixel."""
    if lut.grid != img.grid:
        raise DataError(
            f"LUT grid {lut.grid.shape} does not match image grid {img.grid.shape}"
        )
    return ErpImage(_sample_erp(img.data, lut.coords, img.grid))


def resize_erp(img: ErpImage, grid: ErpGridSpec) -> ErpImage:
    """Bilinear resize onto another ERP grid (utility for corpus ingestion)."""
    if grid.shape == img.grid.shape:
        return ErpImage(img.data.copy())
    sy = img.grid.height / grid.height
    sx = img.grid.width / grid.width
    v = (np.arange(grid.height) + 0.5) * sy - 0.5
    u = (np.arange(grid.width) + 0.5) * sx - 0.5
    uu, vv = np.meshgrid(u, v)
    out, _ = bilinear_kernel(img.data, uu, vv, circular=True)
    return ErpImage(out)
