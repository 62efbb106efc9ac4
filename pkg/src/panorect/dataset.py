"""Tilted-panorama synthesis, splits, degradations, and sample storage.

Every random draw comes from a counter-based Philox generator keyed by
(seed, stream), so any sample can be regenerated in isolation and the
pipeline parallelizes without changing results.

On-disk layout per sample:

    <root>/<split>/<id>/upright.png     8-bit target panorama
    <root>/<split>/<id>/input_erp.png   8-bit tilted panorama
    <root>/<split>/<id>/input_cube.bin  float32 cubemap tensor
    <root>/<split>/<id>/lut_gt.bin      float32 rectification LUT
    <root>/<split>/<id>/meta.json       angles, seed, config hash

ERP images are quantized to the 8-bit grid when a sample is synthesized,
so writing and re-reading a sample is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, resample, tensorio
from .errors import ConfigError, DataError
from .images import Cubemap, ErpGridSpec, ErpImage, InclinationAngles, Lut3D
from .util import as_jsonable, config_hash

DEFAULT_SEED = 100

# stream tags keep the per-purpose Philox streams apart
_STREAM_SAMPLE = 1
_STREAM_SPLIT = 2
_STREAM_DEGRADE = 3


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Philox generator for one (seed, stream, index) triple."""
    return np.random.Generator(np.random.Philox(key=[seed, (stream << 32) | index]))


@dataclass(frozen=True)
class SynthConfig:
    erp_height: int = 256
    face_size: int = 128
    angle_range_deg: float = 60.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not 0.0 < self.angle_range_deg <= 90.0:
            raise ConfigError(f"angle_range_deg must be in (0, 90], got {self.angle_range_deg}")
        if self.face_size < 2:
            raise ConfigError(f"face_size must be >= 2, got {self.face_size}")

    @property
    def grid(self) -> ErpGridSpec:
        return ErpGridSpec(2 * self.erp_height, self.erp_height)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if min(self.train, self.val, self.test) < 0:
            raise ConfigError("split fractions must be non-negative")


@dataclass
class Sample:
    id: str
    upright_gt: ErpImage
    angles_gt: InclinationAngles
    nonupright_erp: ErpImage
    nonupright_cubemap: Cubemap
    lut_gt: Lut3D

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and self.id == other.id
            and tuple(self.angles_gt) == tuple(other.angles_gt)
            and self.upright_gt == other.upright_gt
            and self.nonupright_erp == other.nonupright_erp
            and self.nonupright_cubemap == other.nonupright_cubemap
            and self.lut_gt == other.lut_gt
        )


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round onto the 8-bit grid; keeps PNG round trips bit-exact."""
    return (np.rint(np.clip(img, 0.0, 1.0) * 255.0) / np.float32(255.0)).astype(np.float32)


def ground_truth_lut(angles: InclinationAngles, grid: ErpGridSpec, dtype=np.float32) -> Lut3D:
    """Per-pixel tilted-frame coordinate of each upright pixel direction.

    Sampling the tilted image at these coordinates recovers the upright
    image, because the tilt maps upright direction d to R @ d. float32 by
    default to match the storage dtype.
    """
    rot = geometry.rotation_from_angles(angles)
    dirs = geometry.erp_direction_grid(grid)
    coords = np.einsum("ij,jhw->ihw", rot, dirs)
    return Lut3D(coords.astype(dtype))


def identity_lut(grid: ErpGridSpec) -> Lut3D:
    """Canonical per-pixel sphere grid; full precision so that sampling
    through it is the exact identity."""
    return Lut3D(geometry.erp_direction_grid(grid))


def draw_angles(cfg: SynthConfig, index: int) -> InclinationAngles:
    g = stream_rng(cfg.seed, _STREAM_SAMPLE, index)
    p, r = g.uniform(-cfg.angle_range_deg, cfg.angle_range_deg, size=2)
    return InclinationAngles(float(p), float(r))


def synth_sample(upright: ErpImage, cfg: SynthConfig, index: int, sample_id: str | None = None) -> Sample:
    """Create one training sample from an upright panorama.

    Deterministic given (cfg.seed, index). The upright input must already
    be on cfg.grid.
    """
    if upright.grid != cfg.grid:
        raise DataError(f"upright image grid {upright.grid.shape} != config grid {cfg.grid.shape}")
    angles = draw_angles(cfg, index)
    up_q = ErpImage(quantize8(upright.data))
    tilted = resample.rotate_erp(up_q, angles)
    tilted = ErpImage(quantize8(tilted.data))
    cube = resample.erp_to_cubemap(tilted, cfg.face_size)
    cube = Cubemap(cube.faces.astype(np.float32))
    lut = ground_truth_lut(angles, cfg.grid)
    return Sample(
        id=sample_id if sample_id is not None else f"s{index:05d}",
        upright_gt=up_q,
        angles_gt=angles,
        nonupright_erp=tilted,
        nonupright_cubemap=cube,
        lut_gt=lut,
    )


def split_dataset(ids: list[str], spec: SplitSpec, seed: int) -> dict[str, list[str]]:
    """Deterministic shuffle then partition.

    Rounding rule: n_train = floor(train * N); n_val = floor(val * N + 0.5)
    (round half up); test takes the remainder. Splits are disjoint and
    cover the input exactly.
    """
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids")
    order = list(ids)
    stream_rng(seed, _STREAM_SPLIT).shuffle(order)
    n = len(order)
    n_train = int(np.floor(spec.train * n))
    n_val = int(np.floor(spec.val * n + 0.5))
    n_val = min(n_val, n - n_train)
    return {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }


# ---------------------------------------------------------------------------
# degradations (evaluation-time by default; pass them to training explicitly
# if robustness training is wanted)

MOSAIC_MASK_SIZES = (32, 64, 96, 128)
MOSAIC_BLOCK = 10
GAUSSIAN_SIGMAS = (0.01, 0.02, 0.03, 0.04, 0.05)


def degrade_mosaic(
    img: ErpImage, mask_size: int, block: int = MOSAIC_BLOCK, rng: np.random.Generator | None = None
) -> ErpImage:
    """Replace one uniformly placed square with block-averaged mosaic.

    Blocks cut off by the square's edge are averaged over their actual
    extent rather than a full block.
    """
    c, h, w = img.data.shape
    if mask_size > min(h, w):
        raise DataError(f"mosaic mask {mask_size} exceeds image {h}x{w}")
    if block < 1:
        raise DataError(f"block must be >= 1, got {block}")
    if rng is None:
        rng = stream_rng(DEFAULT_SEED, _STREAM_DEGRADE)
    y0 = int(rng.integers(0, h - mask_size + 1))
    x0 = int(rng.integers(0, w - mask_size + 1))
    out = img.data.copy()
    region = out[:, y0 : y0 + mask_size, x0 : x0 + mask_size]
    for by in range(0, mask_size, block):
        for bx in range(0, mask_size, block):
            blk = region[:, by : by + block, bx : bx + block]
            blk[:] = blk.mean(axis=(1, 2), keepdims=True)
    return ErpImage(out)


def degrade_gaussian(img: ErpImage, sigma: float, rng: np.random.Generator | None = None) -> ErpImage:
    """Add pixelwise N(0, sigma^2) noise, then clamp to [0, 1]."""
    if not 0.0 <= sigma <= 1.0:
        raise DataError(f"sigma out of range: {sigma}")
    if rng is None:
        rng = stream_rng(DEFAULT_SEED, _STREAM_DEGRADE)
    noise = rng.normal(0.0, sigma, size=img.data.shape)
    return ErpImage(np.clip(img.data + noise.astype(img.data.dtype), 0.0, 1.0))


def parse_degradation(spec: str | None):
    """Parse "mosaic:<mask>" / "gaussian:<sigma>" / None into a callable factory.

    Returns (name, param, fn) where fn(img, rng) applies the degradation.
    """
    if spec is None or spec == "none":
        return None
    try:
        kind, _, arg = spec.partition(":")
        if kind == "mosaic":
            mask = int(arg)
            return ("mosaic", mask, lambda img, rng: degrade_mosaic(img, mask, rng=rng))
        if kind == "gaussian":
            sigma = float(arg)
            return ("gaussian", sigma, lambda img, rng: degrade_gaussian(img, sigma, rng=rng))
    except ValueError as e:
        raise ConfigError(f"bad degradation spec {spec!r}: {e}") from e
    raise ConfigError(f"unknown degradation kind in {spec!r}")


# ---------------------------------------------------------------------------
# storage

def write_sample(root: str | Path, split: str, s: Sample, cfg: SynthConfig, index: int) -> Path:
    d = Path(root) / split / s.id
    d.mkdir(parents=True, exist_ok=True)
    tensorio.write_png(d / "upright.png", s.upright_gt.data)
    tensorio.write_png(d / "input_erp.png", s.nonupright_erp.data)
    tensorio.write_tensor(d / "input_cube.bin", s.nonupright_cubemap.faces)
    tensorio.write_tensor(d / "lut_gt.bin", s.lut_gt.coords)
    meta = {
        "format": "panorect-sample",
        "version": 1,
        "id": s.id,
        "pitch_deg": s.angles_gt.pitch_deg,
        "roll_deg": s.angles_gt.roll_deg,
        "seed": cfg.seed,
        "sample_index": index,
        "config_hash": config_hash(cfg),
        "synth": as_jsonable(cfg),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1))
    return d


def read_sample(sample_dir: str | Path) -> Sample:
    d = Path(sample_dir)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DataError(f"missing meta.json in {d}")
    meta = json.loads(meta_path.read_text())
    upright = ErpImage(tensorio.read_png(d / "upright.png"))
    tilted = ErpImage(tensorio.read_png(d / "input_erp.png"))
    cube = Cubemap(tensorio.read_tensor(d / "input_cube.bin"))
    lut = Lut3D(tensorio.read_tensor(d / "lut_gt.bin"))
    return Sample(
        id=meta["id"],
        upright_gt=upright,
        angles_gt=InclinationAngles(meta["pitch_deg"], meta["roll_deg"]),
        nonupright_erp=tilted,
        nonupright_cubemap=cube,
        lut_gt=lut,
    )


def write_manifest(root: str | Path, cfg: SynthConfig, splits: dict[str, list[str]]) -> None:
    man = {
        "format": "panorect-dataset",
        "version": 1,
        "seed": cfg.seed,
        "config": as_jsonable(cfg),
        "config_hash": config_hash(cfg),
        "counts": {k: len(v) for k, v in splits.items()},
        "splits": splits,
    }
    (Path(root) / "manifest.json").write_text(json.dumps(man, indent=1))


def read_manifest(root: str | Path) -> dict:
    p = Path(root) / "manifest.json"
    if not p.exists():
        raise DataError(f"missing dataset manifest: {p}")
    return json.loads(p.read_text())


def load_split(root: str | Path, split: str) -> list[Sample]:
    man = read_manifest(root)
    if split not in man["splits"]:
        raise DataError(f"unknown split {split!r}")
    return [read_sample(Path(root) / split / sid) for sid in man["splits"][split]]


# ---------------------------------------------------------------------------
# synthetic corpus, for demos and tests when no real panoramas are at hand

def synthetic_panorama(grid: ErpGridSpec, seed: int, terms: int = 20) -> ErpImage:
    """Band-limited random texture, horizontally periodic, values in [0.05, 0.95]."""
    g = np.random.Generator(np.random.Philox(key=[seed, 0xA501]))
    h, w = grid.height, grid.width
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    img = np.zeros((3, h, w))
    for ch in range(3):
        acc = np.zeros((h, w))
        for _ in range(terms):
            fu = int(g.integers(0, 8))
            fv = int(g.integers(0, 8))
            amp = 1.0 / (1.0 + fu + fv)
            ph0, ph1 = g.uniform(0.0, 2.0 * np.pi, size=2)
            acc += amp * np.cos(2 * np.pi * fu * (u + 0.5) / w + ph0) * np.cos(
                np.pi * fv * (v + 0.5) / h + ph1
            )
        acc -= acc.min()
        if acc.max() > 0:
            acc /= acc.max()
        img[ch] = 0.05 + 0.9 * acc
    return ErpImage(img)
