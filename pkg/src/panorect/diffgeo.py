"""Differentiable warps built on the autodiff engine.

Forward results are bit-identical to the plain-numpy versions in resample
because both share the same coordinate formulas and the same bilinear
kernel; these variants additionally carry gradients to predicted angles
and coordinate fields.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import geometry
from .images import ErpGridSpec
from .tensorcore import Tensor, grid_sample, stack
from .tensorcore import engine as E


@lru_cache(maxsize=8)
def _erp_dirs(grid: ErpGridSpec) -> np.ndarray:
    d = geometry.erp_direction_grid(grid)
    d.setflags(write=False)
    return d


@lru_cache(maxsize=8)
def _cube_gather(grid: ErpGridSpec, face_size: int):
    """Per-face ownership masks and in-face sample coords for an ERP grid."""
    face, u, v = geometry.sphere_to_cube_pixel(_erp_dirs(grid), face_size)
    u = u - 0.5
    v = v - 0.5
    masks, coords = [], []
    for f in range(6):
        m = face == f
        cu = np.where(m, u, 0.0)
        cv = np.where(m, v, 0.0)
        mf = m.astype(np.float64)
        for a in (mf, cu, cv):
            a.setflags(write=False)
        masks.append(mf)
        coords.append(np.stack([cu, cv]))
    return masks, coords


def sphere_to_erp_coords(dirs, grid: ErpGridSpec):
    """Pixel coords (2, H, W) of a direction field Tensor (3, H, W)."""
    x, y, z = dirs[0], dirs[1], dirs[2]
    lam = E.atan2(y, x)
    phi = E.asin(E.clip(z, -1.0, 1.0))
    u = (lam + np.pi) * grid.width / (2.0 * np.pi) - 0.5
    v = (np.pi / 2.0 - phi) * grid.height / np.pi - 0.5
    return stack([u, v])


def lut_norms(lut):
    """Per-pixel coordinate-vector length of a (3, H, W) field."""
    lut = lut if isinstance(lut, Tensor) else Tensor(np.asarray(lut))
    return E.sqrt((lut * lut).sum(axis=0))


def apply_lut_diff(img, lut, grid: ErpGridSpec):
    """Warp img by a predicted coordinate field, renormalizing it first.

    img is treated as data; gradients flow through the field. The field is
    divided by its per-pixel length (floored at 1e-6) so that slightly
    off-sphere predictions still address valid directions.
    """
    lut = lut if isinstance(lut, Tensor) else Tensor(np.asarray(lut))
    n = E.sqrt((lut * lut).sum(axis=0, keepdims=True))
    unit = lut / E.clip_min(n, 1e-6)
    coords = sphere_to_erp_coords(unit, grid)
    return grid_sample(img, coords, wrap="circular")


def warp_by_angles_diff(img, pitch_rad, roll_rad, grid: ErpGridSpec):
    """Resample img as if undoing a tilt of the given angles.

    Output pixel at direction d reads img at R(pitch, roll) @ d, which maps
    a tilted panorama back to upright when the angles match its tilt.
    Gradients flow to the two angle scalars.
    """
    dirs = _erp_dirs(grid)
    dx, dy, dz = dirs[0], dirs[1], dirs[2]
    sp, cp = E.sin(pitch_rad), E.cos(pitch_rad)
    sr, cr = E.sin(roll_rad), E.cos(roll_rad)
    sx = cp * dx + (sp * sr) * dy + (sp * cr) * dz
    sy = cr * dy - sr * dz
    sz = (cp * sr) * dy + (cp * cr) * dz - sp * dx
    coords = sphere_to_erp_coords(stack([sx, sy, sz]), grid)
    return grid_sample(img, coords, wrap="circular")


def cubemap_to_erp_diff(faces, grid: ErpGridSpec):
    """Project a (6, C, S, S) feature cubemap onto the ERP grid.

    Same single-owner gather as the plain converter: each output pixel
    reads one face, no cross-face blending.
    """
    faces = faces if isinstance(faces, Tensor) else Tensor(np.asarray(faces))
    s = faces.data.shape[-1]
    masks, coords = _cube_gather(grid, s)
    out = None
    for f in range(6):
        if not masks[f].any():
            continue
        part = grid_sample(faces[f], Tensor(coords[f]), wrap="clamp") * masks[f]
        out = part if out is None else out + part
    return out
