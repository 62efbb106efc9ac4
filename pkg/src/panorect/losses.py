"""Training objective: angle term, coordinate-offset term, perceptual term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffgeo
from .images import ErpGridSpec
from .tensorcore import Tensor, l1, l2_mse, smooth_l1
from .tensorcore import engine as E

PSNR_CAP_DB = 120.0


@dataclass(frozen=True)
class LossWeights:
    """Term weights. lam and tau weight the perceptual sub-terms."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 10.0
    lam: float = 1.0
    tau: float = 10.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam", "tau"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be >= 0, got {v!r}")


def _wrap_const(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def differentiable_psnr(pred, gt) -> Tensor:
    """-10 log10(MSE + 1e-12), which tops out at the 120 dB cap for MSE 0."""
    mse = l2_mse(_wrap_const(pred), _wrap_const(gt))
    p = E.log(mse + 1e-12) * (-10.0 / np.log(10.0))
    return E.clip(p, -1e30, PSNR_CAP_DB)


def angle_loss(angles_pred_norm, angles_gt_norm, input_erp, upright_gt,
               grid: ErpGridSpec) -> Tensor:
    """Normalized-angle regression plus a reprojection term.

    The image term warps the non-upright input by the inverse of the
    predicted rotation and compares against the upright target; gradients
    reach the angles through the rotation-matrix entries.
    """
    pred = _wrap_const(angles_pred_norm)
    gt = Tensor(np.asarray(angles_gt_norm, dtype=np.float64))
    reg = smooth_l1(pred, gt, beta=1.0)

    to_rad = np.pi / 180.0
    pitch = (pred[0] * 180.0 - 90.0) * to_rad
    roll = (pred[1] * 180.0 - 90.0) * to_rad
    warped = diffgeo.warp_by_angles_diff(_wrap_const(input_erp), pitch, roll, grid)
    return reg + l1(warped, _wrap_const(upright_gt))


def offset_loss(lut_pred, lut_gt, input_erp, upright_gt, grid: ErpGridSpec) -> Tensor:
    """Coordinate-field regression, reconstruction, and unit-sphere terms."""
    lut_pred = _wrap_const(lut_pred)
    direct = l1(lut_pred, _wrap_const(lut_gt))
    recon = l1(diffgeo.apply_lut_diff(_wrap_const(input_erp), lut_pred, grid),
               _wrap_const(upright_gt))
    norms = diffgeo.lut_norms(lut_pred)
    unit_sph = l2_mse(norms, Tensor(np.ones_like(norms.data)))
    return direct + recon + unit_sph


def perceptual_loss(img_pred, img_gt, w: LossWeights, backend=None) -> Tensor:
    """lam * backend + tau / PSNR; the backend defaults to a zero stub."""
    psnr = differentiable_psnr(img_pred, img_gt)
    term = w.tau / E.clip_min(psnr, 1e-6)
    if backend is not None and w.lam != 0:
        term = term + w.lam * backend(_wrap_const(img_pred), _wrap_const(img_gt))
    return term


def total_loss(ang, offset, perceptual, w: LossWeights) -> Tensor:
    return w.alpha * _wrap_const(ang) + w.beta * _wrap_const(offset) \
        + w.gamma * _wrap_const(perceptual)


def compute_losses(output, sample, w: LossWeights | None = None, backend=None) -> dict:
    """All four terms for one model output against its sample.

    output carries angles_norm_t, lut_pred, and upright_pred Tensors;
    sample is a dataset Sample. Returns Tensors keyed angle / offset /
    perceptual / total.
    """
    from . import geometry

    w = w or LossWeights()
    grid = sample.upright_gt.grid
    gt_norm = np.array(list(geometry.normalize_angles(sample.angles_gt)))
    ang = angle_loss(output.angles_norm_t, gt_norm, sample.nonupright_erp.data,
                     sample.upright_gt.data, grid)
    off = offset_loss(output.lut_pred, sample.lut_gt.coords,
                      sample.nonupright_erp.data, sample.upright_gt.data, grid)
    perc = perceptual_loss(output.upright_pred, sample.upright_gt.data, w, backend)
    return {
        "angle": ang,
        "offset": off,
        "perceptual": perc,
        "total": total_loss(ang, off, perc, w),
    }
