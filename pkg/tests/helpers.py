"""Shared helpers for the test suite."""
import numpy as np

from panorect.dataset import synthetic_panorama
from panorect.images import ErpGridSpec, ErpImage


def rng(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def smooth_pano(grid: ErpGridSpec, seed: int = 0) -> ErpImage:
    return synthetic_panorama(grid, seed)


def psnr(a, b, cap_db: float = 120.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 1e-12:
        return cap_db
    return min(10.0 * np.log10(1.0 / mse), cap_db)


def band_mask(grid: ErpGridSpec, lat_deg: float = 60.0) -> np.ndarray:
    """Boolean (H, W) mask of pixels with |latitude| below lat_deg."""
    v = np.arange(grid.height)
    lat = 90.0 - 180.0 * (v + 0.5) / grid.height
    rows = np.abs(lat) < lat_deg
    return np.repeat(rows[:, None], grid.width, axis=1)
