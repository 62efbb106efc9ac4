"""Evaluation: angle-threshold accuracy, binned error stats, image quality.

A sample counts as correct at threshold t only when the pitch error and
the roll error are each strictly below t. The per-sample scalar error
used for means, medians and bins is max(|pitch err|, |roll err|), the
tightest scalar consistent with that rule. Normalized reconstruction
errors (NRMSE, NMAE) are divided by the ground-truth dynamic range, so
they compare runs of this package against each other, not against
numbers normalized some other way.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import dataset, resample
from .errors import DataError
from .images import ErpImage, InclinationAngles
from .losses import PSNR_CAP_DB
from .tensorcore import no_grad
from .util import as_jsonable, config_hash

DEFAULT_THRESHOLDS = (1, 2, 3, 4, 5, 12)

BIN_WIDTH_DEG = 10.0
N_BINS = 9  # |tilt| up to 90 degrees

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class AngleReport:
    accuracy_at: dict
    mean_err_deg: float
    median_err_deg: float
    per_bin_medians: list


@dataclass(frozen=True)
class ImageReport:
    psnr_db: float
    ssim: float
    nrmse: float
    nmae: float


def _angles_array(items) -> np.ndarray:
    out = np.empty((len(items), 2), dtype=np.float64)
    for i, a in enumerate(items):
        p, r = a
        out[i, 0] = float(p)
        out[i, 1] = float(r)
    return out


def angle_accuracy(preds, gts, thresholds=DEFAULT_THRESHOLDS) -> AngleReport:
    """Score predicted (pitch, roll) pairs against ground truth.

    Accepts InclinationAngles or plain (pitch, roll) degree pairs, so
    out-of-range predictions can still be scored.
    """
    if len(preds) != len(gts):
        raise DataError(f"prediction/target count mismatch: {len(preds)} vs {len(gts)}")
    if not len(preds):
        raise DataError("no samples to score")
    p = _angles_array(preds)
    g = _angles_array(gts)
    axis_err = np.abs(p - g)
    err = axis_err.max(axis=1)  # the max folds the strict-AND threshold rule

    accuracy_at = {t: float(np.count_nonzero(err < t) / err.size) for t in thresholds}

    key = np.abs(g).max(axis=1)
    idx = np.minimum((key // BIN_WIDTH_DEG).astype(int), N_BINS - 1)
    per_bin = []
    for b in range(N_BINS):
        sel = err[idx == b]
        per_bin.append({
            "lo_deg": b * BIN_WIDTH_DEG,
            "hi_deg": (b + 1) * BIN_WIDTH_DEG,
            "count": int(sel.size),
            "median_err_deg": float(np.median(sel)) if sel.size else None,
        })
    return AngleReport(
        accuracy_at=accuracy_at,
        mean_err_deg=float(err.mean()),
        median_err_deg=float(np.median(err)),
        per_bin_medians=per_bin,
    )


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _window_mean(a: np.ndarray, w1d: np.ndarray) -> np.ndarray:
    # rows clamp at the poles, columns wrap across the 360 degree seam
    out = correlate1d(a, w1d, axis=0, mode="nearest")
    return correlate1d(out, w1d, axis=1, mode="wrap")


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    w1d = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mx = _window_mean(x, w1d)
    my = _window_mean(y, w1d)
    vx = _window_mean(x * x, w1d) - mx * mx
    vy = _window_mean(y * y, w1d) - my * my
    cxy = _window_mean(x * y, w1d) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def _image_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, ErpImage) else np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"expected (C, H, W) image, got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def image_metrics(pred, gt) -> ImageReport:
    """PSNR / SSIM / NRMSE / NMAE for a [0, 1] image pair."""
    p = _image_array(pred)
    g = _image_array(gt)
    if p.shape != g.shape:
        raise DataError(f"image shape mismatch: {p.shape} vs {g.shape}")

    diff = p - g
    mse = float(np.mean(diff * diff))
    psnr = PSNR_CAP_DB if mse == 0.0 else float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))
    ssim = float(np.mean([_ssim_channel(p[c], g[c]) for c in range(p.shape[0])]))

    span = float(g.max() - g.min())
    if span == 0.0:
        span = 1.0  # degenerate target: report against unit range
    return ImageReport(
        psnr_db=psnr,
        ssim=ssim,
        nrmse=float(np.sqrt(mse) / span),
        nmae=float(np.mean(np.abs(diff)) / span),
    )


def evaluate_run(model, samples, degradation: str | None = None, *,
                 seed: int = dataset.DEFAULT_SEED,
                 thresholds=DEFAULT_THRESHOLDS, threads: int = 1):
    """Score a model over a sample list, optionally degrading inputs first.

    Returns (report, timings). The report is JSON-able and fully
    deterministic for a given model, sample list and seed; wall-clock
    numbers live in the separate timings dict so re-running the same
    evaluation can produce byte-identical report files.
    """
    if not samples:
        raise DataError("no samples to evaluate")
    deg = dataset.parse_degradation(degradation)
    model.eval()
    t0 = time.perf_counter()

    def score(item):
        index, s = item
        t1 = time.perf_counter()
        erp, cube = s.nonupright_erp, s.nonupright_cubemap
        if deg is not None:
            fn = deg[2]
            erp = fn(erp, dataset.stream_rng(seed, dataset._STREAM_DEGRADE, index))
            cube = resample.erp_to_cubemap(erp, model.cfg.face_size)
        out = model(erp, cube)
        rep = image_metrics(out.upright_pred.data, s.upright_gt.data)
        return out.angles, rep, time.perf_counter() - t1

    with no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                rows = list(ex.map(score, enumerate(samples)))
        else:
            rows = [score(item) for item in enumerate(samples)]

    preds = [r[0] for r in rows]
    ang = angle_accuracy(preds, [s.angles_gt for s in samples], thresholds)
    n = float(len(rows))
    image_means = {
        "psnr_db": sum(r[1].psnr_db for r in rows) / n,
        "ssim": sum(r[1].ssim for r in rows) / n,
        "nrmse": sum(r[1].nrmse for r in rows) / n,
        "nmae": sum(r[1].nmae for r in rows) / n,
    }
    per_sample = []
    for s, (pred, rep, _) in zip(samples, rows):
        per_sample.append({
            "id": s.id,
            "pitch_gt_deg": s.angles_gt.pitch_deg,
            "roll_gt_deg": s.angles_gt.roll_deg,
            "pitch_pred_deg": pred.pitch_deg,
            "roll_pred_deg": pred.roll_deg,
            "err_deg": max(abs(pred.pitch_deg - s.angles_gt.pitch_deg),
                           abs(pred.roll_deg - s.angles_gt.roll_deg)),
            "psnr_db": rep.psnr_db,
            "ssim": rep.ssim,
        })

    report = {
        "format": "panorect-eval",
        "version": 1,
        "config_hash": config_hash(model.cfg),
        "model_config": as_jsonable(model.cfg),
        "n_samples": len(samples),
        "seed": seed,
        "degradation": {
            "spec": degradation if deg is not None else None,
            "kind": deg[0] if deg is not None else None,
            "param": deg[1] if deg is not None else None,
        },
        "angles": {
            "accuracy_at": {str(t): ang.accuracy_at[t] for t in thresholds},
            "mean_err_deg": ang.mean_err_deg,
            "median_err_deg": ang.median_err_deg,
            "per_bin_medians": ang.per_bin_medians,
        },
        "image": image_means,
        "per_sample": per_sample,
        "fid": "unavailable",
    }
    timings = {
        "total_s": time.perf_counter() - t0,
        "per_sample_s": [r[2] for r in rows],
        "threads": threads,
    }
    return report, timings
