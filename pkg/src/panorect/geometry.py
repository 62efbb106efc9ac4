"""Spherical coordinate math shared by every other module.

Frozen conventions:

* Right-handed world frame, z up. An upright panorama has the zenith at
  (0, 0, 1) and x pointing out of the image center.
* ERP continuous coordinates address integer pixel centers: column u maps
  to longitude 2*pi*(u+0.5)/W - pi, row v to latitude pi/2 - pi*(v+0.5)/H.
  At the poles (|z| = 1) the longitude is undefined and u is fixed to
  W/2 - 0.5.
* Cube faces are ordered [+x, -x, +y, -y, +z, -z]. Face coordinates are
  continuous in [0, S) with pixel i centered at i + 0.5; the in-face frame
  for each face is given by FACE_AXES. +z is the "up" face and v grows
  downward (decreasing z) on the four side faces.
* The tilt rotation R(pitch, roll) maps upright-frame directions to
  tilted-frame directions and factors as Ry(pitch) @ Rx(roll).

Directions are unit 3-vectors stored as arrays with the xyz axis first.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError
from .images import CubeCoord, ErpGridSpec, InclinationAngles, NormalizedAngles

# Per-face (normal, u-axis, v-axis). A face pixel with in-square coords
# a, b in [-1, 1] sees direction normalize(normal + a*u_axis + b*v_axis).
FACE_AXES = np.array(
    [
        [[1, 0, 0], [0, 1, 0], [0, 0, -1]],    # +x
        [[-1, 0, 0], [0, -1, 0], [0, 0, -1]],  # -x
        [[0, 1, 0], [-1, 0, 0], [0, 0, -1]],   # +y
        [[0, -1, 0], [1, 0, 0], [0, 0, -1]],   # -y
        [[0, 0, 1], [0, 1, 0], [1, 0, 0]],     # +z (up)
        [[0, 0, -1], [0, 1, 0], [-1, 0, 0]],   # -z (down)
    ],
    dtype=np.float64,
)

FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


def _angles(a) -> tuple[float, float]:
    if isinstance(a, InclinationAngles):
        return a.pitch_deg, a.roll_deg
    p, r = a
    return float(p), float(r)


def normalize_angles(a: InclinationAngles) -> NormalizedAngles:
    """Map degrees in [-90, 90] to [0, 1] per axis."""
    p, r = _angles(a)
    return NormalizedAngles((p + 90.0) / 180.0, (r + 90.0) / 180.0)


def denormalize_angles(n: NormalizedAngles) -> InclinationAngles:
    """Inverse of normalize_angles: angle = value * 180 - 90."""
    p, r = n
    return InclinationAngles(p * 180.0 - 90.0, r * 180.0 - 90.0)


def rotation_from_angles(a) -> np.ndarray:
    """3x3 rotation taking upright-frame directions to tilted-frame ones.

    Equals Ry(pitch) @ Rx(roll): first roll about x, then pitch about y.
    """
    p, r = _angles(a)
    p = np.radians(p)
    r = np.radians(r)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    return np.array(
        [
            [cp, sp * sr, sp * cr],
            [0.0, cr, -sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def invert_rotation(r: np.ndarray) -> np.ndarray:
    """Inverse of a rotation matrix (its transpose)."""
    r = np.asarray(r)
    if r.shape != (3, 3):
        raise DataError(f"rotation must be 3x3, got {r.shape}")
    return r.T.copy()


def erp_pixel_to_sphere(u, v, grid: ErpGridSpec) -> np.ndarray:
    """Directions for ERP pixel-center coordinates. Output shape (3, ...).

    u in [-0.5, W-0.5), v in [-0.5, H-0.5]; the caller clamps if needed.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lon = 2.0 * np.pi * (u + 0.5) / grid.width - np.pi
    lat = np.pi / 2.0 - np.pi * (v + 0.5) / grid.height
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)])


def sphere_to_erp_pixel(d: np.ndarray, grid: ErpGridSpec) -> tuple[np.ndarray, np.ndarray]:
    """ERP pixel-center coordinates (u, v) of unit directions d (3, ...)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[0], d[1], d[2]
    z = np.clip(z, -1.0, 1.0)
    lon = np.arctan2(y, x)
    lat = np.arcsin(z)
    u = (lon + np.pi) * grid.width / (2.0 * np.pi) - 0.5
    v = (np.pi / 2.0 - lat) * grid.height / np.pi - 0.5
    # longitude is undefined at the poles; pin it to the image center column
    at_pole = np.abs(z) == 1.0
    if np.any(at_pole):
        u = np.where(at_pole, grid.width / 2.0 - 0.5, u)
    return u, v


def erp_direction_grid(grid: ErpGridSpec) -> np.ndarray:
    """Unit direction of every pixel center, shape (3, H, W)."""
    v, u = np.meshgrid(np.arange(grid.height), np.arange(grid.width), indexing="ij")
    return erp_pixel_to_sphere(u, v, grid)


def cube_pixel_to_sphere(coord, face_size: int | None = None, u=None, v=None) -> np.ndarray:
    """Directions for cube-face coordinates.

    Accepts either a CubeCoord plus face_size, or (face, u, v) arrays via
    cube_pixel_to_sphere(face_array, face_size, u, v). Output shape (3, ...).
    """
    if isinstance(coord, CubeCoord):
        face = np.asarray(coord.face)
        u = np.asarray(coord.u, dtype=np.float64)
        v = np.asarray(coord.v, dtype=np.float64)
    else:
        face = np.asarray(coord)
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
    if face_size is None:
        raise DataError("face_size is required")
    a = 2.0 * u / face_size - 1.0
    b = 2.0 * v / face_size - 1.0
    axes = FACE_AXES[face]  # (..., 3, 3)
    d = (
        np.moveaxis(axes[..., 0, :], -1, 0)
        + a * np.moveaxis(axes[..., 1, :], -1, 0)
        + b * np.moveaxis(axes[..., 2, :], -1, 0)
    )
    return d / np.sqrt((d * d).sum(axis=0))


def sphere_to_cube_pixel(d: np.ndarray, face_size: int):
    """Owning face and in-face coordinates of unit directions d (3, ...).

    The face is the axis of the largest |component|; exact ties resolve to
    the lowest face index. Returns (face, u, v) arrays.
    """
    d = np.asarray(d, dtype=np.float64)
    mags = np.abs(d)
    axis = mags.argmax(axis=0)
    comp = np.take_along_axis(d, axis[None], axis=0)[0]
    face = 2 * axis + (comp < 0)
    axes = FACE_AXES[face]
    m = np.abs(comp)
    a = (np.moveaxis(axes[..., 1, :], -1, 0) * d).sum(axis=0) / m
    b = (np.moveaxis(axes[..., 2, :], -1, 0) * d).sum(axis=0) / m
    u = (a + 1.0) * face_size / 2.0
    v = (b + 1.0) * face_size / 2.0
    return face, u, v


def cube_direction_grid(face_size: int) -> np.ndarray:
    """Unit direction of every cube pixel center, shape (6, 3, S, S)."""
    c = np.arange(face_size) + 0.5
    v, u = np.meshgrid(c, c, indexing="ij")
    out = np.empty((6, 3, face_size, face_size))
    for f in range(6):
        out[f] = cube_pixel_to_sphere(np.full_like(v, f, dtype=int), face_size, u, v)
    return out
