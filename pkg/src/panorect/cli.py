"""Command surface binding the library into offline pipelines.

One binary, subcommand style. A run configuration comes from an optional
text file (`key = value` lines, or a JSON object) plus flag overrides;
flags win. Every command writes enough provenance (config hash, seed)
into its outputs to reproduce them, and no command mutates its inputs.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataset, diffgeo, metrics, network, resample, tensorio
from .errors import ConfigError, DataError, NumericError
from .images import Cubemap, ErpGridSpec, ErpImage, InclinationAngles
from .losses import LossWeights, compute_losses
from .network import ModelConfig, PanoRectModel, ViTSpec, train_step
from .tensorcore import Adam, BatchNorm2d, MultiHeadAttention, Tensor, gradcheck, no_grad
from .tensorcore import checkpoint as ckpt_io
from .tensorcore import engine as E
from .tensorcore import nn as tnn
from .util import as_jsonable, config_hash, resolve_threads

# batch-order stream; dataset uses tags 1..3 and model init uses 4
_STREAM_BATCH = 5

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment needs, flat so a text file can express it."""

    model: str = "toy"              # toy | full
    align_mode: str = "implicit"    # implicit | explicit
    use_hfm: bool = True
    use_circular_pad: bool = True
    use_channel_attention: bool = True
    use_vit: bool = True
    erp_height: int | None = None   # None: follow the model grid
    face_size: int | None = None    # None: follow the model config
    angle_range_deg: float = 60.0
    seed: int = dataset.DEFAULT_SEED
    split: tuple = (0.70, 0.15, 0.15)
    lr: float = 1e-4
    batch_size: int = 6
    epochs: int = 1
    checkpoint_every: int = 100     # steps
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 10.0
    lam: float = 1.0
    tau: float = 10.0
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.model not in ("toy", "full"):
            raise ConfigError(f"model must be toy|full, got {self.model!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        # force eager validation so bad values fail before any work starts
        self.model_config()
        self.synth_config()
        self.split_spec()
        self.loss_weights()

    def model_config(self) -> ModelConfig:
        base = ModelConfig.full() if self.model == "full" else ModelConfig.toy()
        return replace(
            base,
            align_mode=self.align_mode,
            use_hfm=self.use_hfm,
            use_circular_pad=self.use_circular_pad,
            use_channel_attention=self.use_channel_attention,
            use_vit=self.use_vit,
        )

    def synth_config(self) -> dataset.SynthConfig:
        mc = self.model_config()
        return dataset.SynthConfig(
            erp_height=self.erp_height if self.erp_height is not None else mc.grid.height,
            face_size=self.face_size if self.face_size is not None else mc.face_size,
            angle_range_deg=self.angle_range_deg,
            seed=self.seed,
        )

    def split_spec(self) -> dataset.SplitSpec:
        return dataset.SplitSpec(*self.split)

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                               lam=self.lam, tau=self.tau)
        except ValueError as e:
            raise ConfigError(str(e)) from e


_INT_KEYS = {"seed", "batch_size", "epochs", "checkpoint_every", "erp_height", "face_size"}
_FLOAT_KEYS = {"angle_range_deg", "lr", "alpha", "beta", "gamma", "lam", "tau"}
_BOOL_KEYS = {"use_hfm", "use_circular_pad", "use_channel_attention", "use_vit"}
_STR_KEYS = {"model", "align_mode", "data_dir", "out_dir"}
_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _parse_split(val) -> tuple:
    if isinstance(val, str):
        parts = val.split("/")
    elif isinstance(val, (list, tuple)):
        parts = list(val)
    else:
        raise ConfigError(f"split must look like 0.7/0.15/0.15, got {val!r}")
    if len(parts) != 3:
        raise ConfigError(f"split needs three fractions, got {val!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"bad split {val!r}: {e}") from e


def make_run_config(raw: dict) -> RunConfig:
    """Validate raw key/value pairs (strings allowed) into a RunConfig."""
    vals = {}
    for key, val in raw.items():
        try:
            if key == "split":
                vals[key] = _parse_split(val)
            elif key in _INT_KEYS:
                vals[key] = None if val is None else int(val)
            elif key in _FLOAT_KEYS:
                vals[key] = float(val)
            elif key in _BOOL_KEYS:
                if isinstance(val, bool):
                    vals[key] = val
                elif isinstance(val, str) and val.lower() in _BOOL_WORDS:
                    vals[key] = _BOOL_WORDS[val.lower()]
                else:
                    raise ConfigError(f"{key} expects true/false, got {val!r}")
            elif key in _STR_KEYS:
                vals[key] = None if val is None else str(val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {val!r} ({e})") from e
    return RunConfig(**vals)


def read_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
        if not isinstance(obj, dict):
            raise ConfigError(f"{p}: config JSON must be an object")
        return obj
    raw = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{p}:{ln}: expected key = value")
        raw[key.strip()] = val.strip()
    return raw


_FLAG_KEYS = ("model", "align_mode", "seed", "lr", "batch_size", "epochs",
              "angle_range_deg", "split", "erp_height", "face_size")


def _build_cfg(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        raw.update(read_config_file(args.config))
    for kv in getattr(args, "set", None) or []:
        key, sep, val = kv.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        raw[key.strip()] = val.strip()
    for key in _FLAG_KEYS:  # dedicated flags beat config file and --set
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    return make_run_config(raw)


def _require(value, flag: str, cfg_value=None):
    if value is not None:
        return value
    if cfg_value is not None:
        return cfg_value
    raise ConfigError(f"missing {flag} (flag or config)")


# ---------------------------------------------------------------------------
# shared plumbing

def _read_image(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing image: {p}")
    try:
        return tensorio.read_png(p)
    except OSError as e:
        raise DataError(f"cannot read image {p}: {e}") from e


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_run_manifest(out_dir: Path, command: str, cfg: RunConfig | None,
                        extra: dict | None = None) -> None:
    man = {"format": "panorect-run", "version": 1, "command": command}
    if cfg is not None:
        man["config"] = as_jsonable(cfg)
        man["config_hash"] = config_hash(cfg)
        man["seed"] = cfg.seed
    if extra:
        man.update(extra)
    _write_json(Path(out_dir) / "run.json", man)


def _load_model(path, expect_cfg: ModelConfig | None = None) -> PanoRectModel:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing checkpoint: {p}")
    ck = ckpt_io.load_checkpoint(p)
    if not isinstance(ck.config, dict) or "model" not in ck.config:
        raise DataError(f"{p}: checkpoint lacks a model config")
    mc = network.config_from_jsonable(ck.config["model"])
    if expect_cfg is not None and config_hash(expect_cfg) != config_hash(mc):
        raise DataError(
            "checkpoint/config hash mismatch: "
            f"checkpoint {config_hash(mc)} vs requested {config_hash(expect_cfg)}"
        )
    model = PanoRectModel(mc, seed=int(ck.config.get("seed", dataset.DEFAULT_SEED)))
    ckpt_io.restore_parameters(dict(model.named_parameters()), ck)
    return model


def _map_samples(fn, items, threads: int):
    """Order-preserving map, optionally across worker threads."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(item) for item in items]


# ---------------------------------------------------------------------------
# convert

def cmd_convert(args) -> int:
    out = Path(args.output)
    if args.mode == "erp2cube":
        img = ErpImage(_read_image(args.input))  # rejects non-2:1 inputs
        face = args.face_size or img.grid.height // 2
        cm = resample.erp_to_cubemap(img, face)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(6):
            tensorio.write_png(out / f"face{i}.png", cm.faces[i])
        _write_json(out / "manifest.json", {
            "format": "panorect-cubemap",
            "version": 1,
            "mode": "erp2cube",
            "face_size": face,
            "face_order": "+x -x +y -y +z -z",
            "source_grid": list(img.grid.shape),
            "input": str(args.input),
        })
        print(f"wrote 6 faces of {face}x{face} to {out}")
        return 0

    # cube2erp: input is a directory of face{i}.png
    in_dir = Path(args.input)
    faces = [ _read_image(in_dir / f"face{i}.png") for i in range(6) ]
    try:
        cm = Cubemap(np.stack(faces))
    except ValueError as e:
        raise DataError(f"inconsistent face shapes in {in_dir}: {e}") from e
    height = args.height
    man_path = in_dir / "manifest.json"
    if height is None and man_path.exists():
        src = json.loads(man_path.read_text()).get("source_grid")
        if src:
            height = int(src[0])
    if height is None:
        height = 2 * cm.face_size
    erp = resample.cubemap_to_erp(cm, ErpGridSpec(2 * height, height))
    out.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_png(out, erp.data)
    _write_json(Path(str(out) + ".manifest.json"), {
        "format": "panorect-erp",
        "version": 1,
        "mode": "cube2erp",
        "grid": list(erp.grid.shape),
        "face_size": cm.face_size,
        "input": str(in_dir),
    })
    print(f"wrote {erp.grid.width}x{erp.grid.height} panorama to {out}")
    return 0


# ---------------------------------------------------------------------------
# synth / degrade

def cmd_synth(args) -> int:
    cfg = _build_cfg(args)
    scfg = cfg.synth_config()
    corpus = Path(args.corpus)
    out = Path(_require(args.output, "output directory", cfg.out_dir))
    if not corpus.is_dir():
        raise DataError(f"corpus directory not found: {corpus}")
    paths = sorted(p for p in corpus.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no images in {corpus}")

    accepted, skipped = [], []
    for p in paths:
        try:
            img = ErpImage(tensorio.read_png(p))
        except (OSError, DataError) as e:
            print(f"skipping {p.name}: {e}", file=sys.stderr)
            skipped.append(p.name)
            continue
        accepted.append((p.stem, img))
    if not accepted:
        raise DataError(f"no usable panoramas in {corpus}")

    splits = dataset.split_dataset([sid for sid, _ in accepted], cfg.split_spec(), scfg.seed)
    split_of = {sid: split for split, ids in splits.items() for sid in ids}

    def build(item):
        index, (sid, img) = item
        if img.grid != scfg.grid:
            img = resample.resize_erp(img, scfg.grid)
        s = dataset.synth_sample(img, scfg, index=index, sample_id=sid)
        dataset.write_sample(out, split_of[sid], s, scfg, index)
        return sid

    _map_samples(build, list(enumerate(accepted)), resolve_threads(args.threads))
    dataset.write_manifest(out, scfg, splits)
    _write_run_manifest(out, "synth", cfg, {"corpus": str(corpus), "skipped": skipped})
    counts = {k: len(v) for k, v in splits.items()}
    print(f"synthesized {len(accepted)} samples into {out} (splits {counts})")
    return 0


def cmd_degrade(args) -> int:
    root = Path(args.dataset)
    out = Path(args.output)
    man = dataset.read_manifest(root)
    scfg = dataset.SynthConfig(**man["config"])
    deg = dataset.parse_degradation(args.spec)
    if deg is None:
        raise ConfigError("degradation spec required, e.g. mosaic:64 or gaussian:0.02")
    _, _, fn = deg
    seed = args.seed if args.seed is not None else scfg.seed

    jobs = []
    index = 0
    for split, ids in man["splits"].items():
        for sid in ids:
            jobs.append((index, split, sid))
            index += 1

    def degrade_one(job):
        idx, split, sid = job
        s = dataset.read_sample(root / split / sid)
        meta = json.loads((root / split / sid / "meta.json").read_text())
        g = dataset.stream_rng(seed, dataset._STREAM_DEGRADE, idx)
        erp_d = ErpImage(dataset.quantize8(fn(s.nonupright_erp, g).data))
        cube_d = resample.erp_to_cubemap(erp_d, s.nonupright_cubemap.face_size)
        s2 = dataset.Sample(
            id=s.id, upright_gt=s.upright_gt, angles_gt=s.angles_gt,
            nonupright_erp=erp_d,
            nonupright_cubemap=Cubemap(cube_d.faces.astype(np.float32)),
            lut_gt=s.lut_gt,
        )
        dataset.write_sample(out, split, s2, scfg, index=meta["sample_index"])

    _map_samples(degrade_one, jobs, resolve_threads(args.threads))
    dataset.write_manifest(out, scfg, man["splits"])
    _write_run_manifest(out, "degrade", None, {
        "degradation": args.spec, "seed": seed, "source": str(root),
        "config_hash": man["config_hash"],
    })
    print(f"degraded {len(jobs)} samples with {args.spec!r} into {out}")
    return 0


# ---------------------------------------------------------------------------
# rectify

def cmd_rectify(args) -> int:
    img = ErpImage(_read_image(args.input))
    out = Path(args.out)
    angle_mode = args.pitch is not None or args.roll is not None
    if angle_mode and args.checkpoint:
        raise ConfigError("choose either --pitch/--roll or --checkpoint, not both")

    if args.checkpoint:
        model = _load_model(args.checkpoint)
        if model.cfg.grid != img.grid:
            raise DataError(
                f"input grid {img.grid.shape} does not match model grid {model.cfg.grid.shape}"
            )
        cube = resample.erp_to_cubemap(img, model.cfg.face_size)
        with no_grad():
            pred = model(img, cube)
        upright = np.clip(pred.upright_pred.data, 0.0, 1.0)
        angles = pred.angles
        report = {"mode": "model", "checkpoint": str(args.checkpoint),
                  "config_hash": config_hash(model.cfg)}
        print(f"predicted pitch_deg={angles.pitch_deg:.3f} roll_deg={angles.roll_deg:.3f}")
    elif args.pitch is not None and args.roll is not None:
        angles = InclinationAngles(args.pitch, args.roll)
        # float64 so a (0, 0) request is the exact identity resample
        lut = dataset.ground_truth_lut(angles, img.grid, dtype=np.float64)
        upright = resample.apply_lut(img, lut).data
        report = {"mode": "angles"}
        print(f"rectified with pitch_deg={angles.pitch_deg:.3f} roll_deg={angles.roll_deg:.3f}")
    else:
        raise ConfigError("provide --pitch and --roll together, or --checkpoint")

    out.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_png(out, upright)
    report.update({
        "format": "panorect-rectify",
        "version": 1,
        "input": str(args.input),
        "output": str(out),
        "pitch_deg": angles.pitch_deg,
        "roll_deg": angles.roll_deg,
    })
    _write_json(Path(str(out) + ".report.json"), report)
    return 0


# ---------------------------------------------------------------------------
# train

def _write_curve(path: Path, curve: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["step,epoch,angle,offset,perceptual,total"]
    for step, epoch, rec in curve:
        lines.append(f"{step},{epoch},{rec['angle']:.8g},{rec['offset']:.8g},"
                     f"{rec['perceptual']:.8g},{rec['total']:.8g}")
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    cfg = _build_cfg(args)
    data = Path(_require(args.dataset, "dataset directory", cfg.data_dir))
    out = Path(_require(args.output, "output directory", cfg.out_dir))
    out.mkdir(parents=True, exist_ok=True)

    samples = dataset.load_split(data, "train")
    if not samples:
        raise DataError(f"train split of {data} is empty")
    mc = cfg.model_config()
    s0 = samples[0]
    if s0.upright_gt.grid != mc.grid:
        raise DataError(
            f"dataset grid {s0.upright_gt.grid.shape} does not match model grid {mc.grid.shape}"
        )
    if s0.nonupright_cubemap.face_size != mc.face_size:
        raise DataError(
            f"dataset face size {s0.nonupright_cubemap.face_size} != model {mc.face_size}"
        )

    model = PanoRectModel(mc, seed=cfg.seed)
    params = dict(model.named_parameters())
    opt = Adam(list(params.values()), lr=cfg.lr)
    start_step = 0
    if args.resume:
        ck = ckpt_io.load_checkpoint(args.resume)
        if config_hash(network.config_from_jsonable(ck.config["model"])) != config_hash(mc):
            raise DataError("checkpoint/config hash mismatch: cannot resume")
        ckpt_io.restore_parameters(params, ck)
        if ck.optimizer is not None:
            opt.load_state_dict(ck.optimizer)
        start_step = ck.step
        print(f"resumed from {args.resume} at step {start_step}")

    n = len(samples)
    spe = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * spe
    weights = cfg.loss_weights()
    ck_cfg = {"model": as_jsonable(mc), "seed": cfg.seed}
    curve = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = dataset.stream_rng(cfg.seed, _STREAM_BATCH, epoch).permutation(n)
            for b in range(spe):
                if step < start_step:
                    step += 1
                    continue
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                rec = train_step(model, opt, [samples[int(i)] for i in idx], weights)
                step += 1
                curve.append((step, epoch, rec))
                if step % cfg.checkpoint_every == 0 and step < total_steps:
                    ckpt_io.save_checkpoint(out / f"ckpt_{step:06d}.bin", params,
                                            ck_cfg, step=step, optimizer=opt)
                if step % 50 == 0 or step == total_steps:
                    print(f"step {step}/{total_steps} total={rec['total']:.4f} "
                          f"angle={rec['angle']:.4f} offset={rec['offset']:.4f} "
                          f"perceptual={rec['perceptual']:.4f}", flush=True)
    except NumericError:
        # the failed step never touched the weights; save them as last-good
        ckpt_io.save_checkpoint(out / "ckpt_lastgood.bin", params, ck_cfg,
                                step=step, optimizer=opt)
        _write_curve(out / "losses.csv", curve)
        print(f"numeric failure at step {step + 1}; last-good checkpoint saved",
              file=sys.stderr)
        raise

    ckpt_io.save_checkpoint(out / "ckpt_final.bin", params, ck_cfg,
                            step=step, optimizer=opt)
    _write_curve(out / "losses.csv", curve)
    _write_run_manifest(out, "train", cfg, {
        "dataset": str(data),
        "n_train": n,
        "steps": step,
        "model_config_hash": config_hash(mc),
        "resumed_from": str(args.resume) if args.resume else None,
    })
    if curve:
        print(f"trained {step} steps; final total loss {curve[-1][2]['total']:.4f}")
    else:
        print(f"checkpoint already covers all {total_steps} steps; nothing to do")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    cfg = _build_cfg(args)
    data = Path(_require(args.dataset, "dataset directory", cfg.data_dir))
    out = Path(_require(args.output, "output directory", cfg.out_dir))
    samples = dataset.load_split(data, args.eval_split)
    # any explicit config source pins the model the checkpoint must match
    expect = cfg.model_config() if (args.config or args.set) else None
    model = _load_model(args.checkpoint, expect_cfg=expect)
    report, timings = metrics.evaluate_run(
        model, samples, args.degradation,
        seed=cfg.seed, threads=resolve_threads(args.threads),
    )
    _write_json(out / "results.json", report)
    _write_json(out / "timings.json", timings)
    acc = report["angles"]["accuracy_at"]
    print(f"evaluated {report['n_samples']} samples: acc@1={acc['1']:.3f} "
          f"acc@5={acc['5']:.3f} mean_err={report['angles']['mean_err_deg']:.2f}deg "
          f"psnr={report['image']['psnr_db']:.2f}dB")
    return 0


# ---------------------------------------------------------------------------
# gradcheck

def _gradcheck_cases(seed: int) -> list:
    def g(k):
        return np.random.Generator(np.random.Philox(key=[seed, k]))

    def t(a, grad=True):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)

    cases = []

    def case(name, tol, run):
        cases.append((name, tol, run))

    def run_linear():
        r = g(1)
        x, w, b = t(r.normal(size=(4, 5))), t(r.normal(size=(3, 5))), t(r.normal(size=(3,)))
        tgt = t(r.normal(size=(4, 3)), grad=False)
        return gradcheck(lambda x, w, b: tnn.l2_mse(tnn.linear(x, w, b), tgt),
                         [x, w, b]).max_err
    case("linear", 1e-6, run_linear)

    def run_conv_circ():
        r = g(2)
        x = t(r.normal(size=(4, 6, 8)))
        w = t(r.normal(size=(6, 2, 3, 3)))
        b = t(r.normal(size=(6,)))
        tgt = t(r.normal(size=(6, 3, 4)), grad=False)
        return gradcheck(lambda x, w, b: tnn.l1(tnn.conv2d(x, w, b, stride=2, groups=2), tgt),
                         [x, w, b]).max_err
    case("conv2d circular stride2 groups2", 1e-6, run_conv_circ)

    def run_conv_zero():
        r = g(3)
        x = t(r.normal(size=(2, 5, 7)))
        w = t(r.normal(size=(3, 2, 3, 3)))
        tgt = t(r.normal(size=(3, 5, 7)), grad=False)
        return gradcheck(lambda x, w: tnn.l2_mse(tnn.conv2d(x, w, pad_mode=tnn.PAD_ZERO), tgt),
                         [x, w]).max_err
    case("conv2d zero pad", 1e-6, run_conv_zero)

    def pad_runner(mode, key):
        def run():
            x = t(g(key).normal(size=(2, 4, 5)))
            return gradcheck(lambda x: (tnn.pad2d(x, (1, 2, 2, 1), mode=mode) ** 2).mean(),
                             [x]).max_err
        return run
    case("pad2d zero", 1e-6, pad_runner(tnn.PAD_ZERO, 4))
    case("pad2d circular", 1e-6, pad_runner(tnn.PAD_CIRC_H, 5))
    case("pad2d circular+replicate", 1e-6, pad_runner(tnn.PAD_CIRC_H_REPL_V, 6))

    def run_shuffle():
        x = t(g(7).normal(size=(8, 2, 4)))
        return gradcheck(
            lambda x: ((tnn.pixel_unshuffle(tnn.pixel_shuffle(x, 2), 2)
                        + tnn.nearest_upsample(x, 2).mean()) ** 2).mean(), [x]).max_err
    case("pixel shuffle/unshuffle + upsample", 1e-6, run_shuffle)

    def run_structural():
        r = g(8)
        m = r.normal(size=(4, 4)) > 0
        a, b = t(r.normal(size=(4, 4))), t(r.normal(size=(4, 4)))

        def f(a, b):
            y = E.where_mask(m, a, b) + E.concat([a, b], axis=0)[:4]
            y = y + E.stack([a, b], axis=0).sum(axis=0)
            return (y.reshape(2, 8).transpose() ** 2).mean()
        return gradcheck(f, [a, b]).max_err
    case("where/concat/stack/reshape", 1e-6, run_structural)

    def run_atan2():
        r = g(9)
        a, b = t(r.normal(size=(9,))), t(r.normal(size=(9,)) + 2.5)
        return gradcheck(lambda a, b: E.atan2(a, b).sum(), [a, b]).max_err
    case("atan2", 1e-6, run_atan2)

    def run_losses():
        r = g(10)
        a = t(r.uniform(0.1, 0.4, size=(3, 6)))
        tgt = t(r.uniform(2.0, 3.0, size=(3, 6)), grad=False)
        return gradcheck(
            lambda a: tnn.l1(a, tgt) + tnn.l2_mse(a, tgt) + tnn.smooth_l1(a, tgt),
            [a]).max_err
    case("l1 + l2 + smooth_l1", 1e-6, run_losses)

    def run_softmax():
        r = g(11)
        x = t(r.normal(size=(4, 6)))
        tgt = t(r.normal(size=(4, 6)), grad=False)
        return gradcheck(lambda x: tnn.l2_mse(E.softmax(x, axis=-1), tgt), [x]).max_err
    case("softmax", 1e-4, run_softmax)

    def run_elementwise():
        x = t(g(12).uniform(-0.8, 0.8, size=(5, 6)))

        def f(x):
            y = E.elu(x) + E.sigmoid(x) + E.gelu(x) + E.sin(x) * E.cos(x)
            y = y + E.exp(0.3 * x) + E.sqrt(E.clip_min(x + 2.0, 1e-3))
            y = y + E.asin(E.clip(x, -0.9, 0.9)) + E.log(E.clip_min(x + 2.0, 1e-3))
            return (y * y).mean()
        return gradcheck(f, [x]).max_err
    case("elementwise (elu/sigmoid/gelu/trig/exp/log)", 1e-4, run_elementwise)

    def run_layer_norm():
        r = g(13)
        x, w, b = t(r.normal(size=(5, 8))), t(r.normal(size=(8,))), t(r.normal(size=(8,)))
        return gradcheck(lambda x, w, b: (tnn.layer_norm(x, w, b, axis=-1) ** 2).mean(),
                         [x, w, b]).max_err
    case("layer_norm", 1e-4, run_layer_norm)

    def run_batch_norm():
        r = g(14)
        bn = BatchNorm2d(4, dtype=np.float64)
        x = t(r.normal(size=(4, 3, 5)))
        tgt = t(r.normal(size=(4, 3, 5)), grad=False)
        return gradcheck(lambda x: tnn.l2_mse(bn(x), tgt), [x]).max_err
    case("batch_norm (train mode)", 1e-4, run_batch_norm)

    def run_mha():
        r = g(15)
        mha = MultiHeadAttention(12, 3, r, dtype=np.float64)
        x = t(r.normal(size=(6, 12)))
        ps = [p for _, p in mha.named_parameters()]
        tgt = t(r.normal(size=(6, 12)), grad=False)
        return gradcheck(lambda x, *ps: tnn.l1(mha(x), tgt), [x] + ps,
                         max_entries=60, rng=g(115)).max_err
    case("multi_head_attention", 1e-3, run_mha)

    def run_grid_sample():
        r = g(16)
        img = t(r.uniform(0.1, 0.9, size=(3, 8, 16)))
        u = r.uniform(0.0, 15.0, size=(5, 7))
        v = r.uniform(0.3, 6.7, size=(5, 7))
        # keep probes off integer sampling points, where the kernel kinks
        u = np.where(np.abs(u - np.round(u)) < 0.1, u + 0.17, u)
        v = np.where(np.abs(v - np.round(v)) < 0.1, v + 0.17, v)
        co = t(np.stack([u, v]))
        tgt = t(r.normal(size=(3, 5, 7)), grad=False)
        return gradcheck(lambda i, c: tnn.l2_mse(tnn.grid_sample(i, c), tgt),
                         [img, co], eps=1e-5).max_err
    case("grid_sample (bilinear)", 1e-3, run_grid_sample)

    grid = ErpGridSpec(32, 16)

    def run_warp_angles():
        img = Tensor(dataset.synthetic_panorama(grid, seed=9).data)
        tgt = Tensor(dataset.synthetic_panorama(grid, seed=11).data)
        p = t(np.float64(np.deg2rad(10.0)))
        r = t(np.float64(np.deg2rad(5.0)))
        return gradcheck(
            lambda p, r: tnn.l1(diffgeo.warp_by_angles_diff(img, p, r, grid), tgt),
            [p, r], eps=1e-5).max_err
    case("warp by angles", 1e-2, run_warp_angles)

    def run_warp_lut():
        img = Tensor(dataset.synthetic_panorama(grid, seed=9).data)
        tgt = Tensor(dataset.synthetic_panorama(grid, seed=11).data)
        lut = t(dataset.ground_truth_lut(InclinationAngles(17.0, -23.0), grid,
                                         dtype=np.float64).coords)
        return gradcheck(lambda l: tnn.l1(diffgeo.apply_lut_diff(img, l, grid), tgt),
                         [lut], max_entries=60, rng=g(117)).max_err
    case("warp by coordinate LUT", 1e-3, run_warp_lut)

    def run_model():
        cfg = ModelConfig.toy(
            grid=ErpGridSpec(64, 32), face_size=8, patch=2,
            vit=ViTSpec(blocks=2, heads=2, embed=12, ffn=24, taps=(1, 2, 2, 2, 2)),
            cnn_channels=(8, 8, 16, 32, 64), tcf_channels=(8, 8, 16, 32, 64),
        )
        model = PanoRectModel(cfg, dtype=np.float64)
        model.eval()
        # a zero-init head predicts exactly 0 degrees, putting every warp
        # coordinate on a bilinear kink; probe a generic point instead
        model.angle_head.lin.weight.data[:] = g(18).normal(0.0, 0.02, size=(2, 64))
        scfg = dataset.SynthConfig(erp_height=32, face_size=8, angle_range_deg=30.0)
        s = dataset.synth_sample(dataset.synthetic_panorama(cfg.grid, seed=3), scfg, index=0)
        w = LossWeights()

        def loss_fn(*params):
            out = model(s.nonupright_erp, s.nonupright_cubemap)
            return compute_losses(out, s, w)["total"]

        picked = [p for _, p in model.named_parameters()]
        best = np.inf
        # shrinking eps resolves finite-difference kink straddles; a real
        # gradient bug stays wrong at every eps
        for eps in (1e-5, 1e-6, 1e-7):
            rep = gradcheck(loss_fn, picked, eps=eps, max_entries=2, rng=g(19))
            best = min(best, rep.max_err)
            if best < 1e-2:
                break
        return best
    case("model parameters (micro config)", 1e-2, run_model)

    return cases


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else dataset.DEFAULT_SEED
    rows = []
    width = max(len(name) for name, _, _ in _gradcheck_cases(seed))
    print(f"{'op':<{width}}  {'max_err':>10}  {'tol':>7}  status")
    for name, tol, run in _gradcheck_cases(seed):
        err = run()
        ok = err < tol
        rows.append((name, err, tol, ok))
        print(f"{name:<{width}}  {err:>10.2e}  {tol:>7.0e}  {'pass' if ok else 'FAIL'}",
              flush=True)
    if args.out:
        lines = ["op,max_err,tol,status"]
        lines += [f"{n},{e:.6e},{t:.0e},{'pass' if ok else 'fail'}"
                  for n, e, t, ok in rows]
        p = Path(args.out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join(lines) + "\n")
    failed = [n for n, _, _, ok in rows if not ok]
    if failed:
        raise NumericError(f"gradient checks failed: {', '.join(failed)}")
    print(f"all {len(rows)} gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_cfg_flags(p: argparse.ArgumentParser, training: bool = False) -> None:
    p.add_argument("--config", help="run config file (key = value lines or JSON)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any run config key (repeatable)")
    p.add_argument("--seed", type=int)
    if training:
        p.add_argument("--model", choices=("toy", "full"))
        p.add_argument("--align-mode", dest="align_mode", choices=("implicit", "explicit"))
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="panorect",
        description="Upright rectification of 360 panoramas: data synthesis, "
                    "training, evaluation, and projection tools.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert between ERP and cubemap projections")
    p.add_argument("mode", choices=("erp2cube", "cube2erp"))
    p.add_argument("input", help="ERP image, or a directory of face{i}.png")
    p.add_argument("output", help="output directory (erp2cube) or PNG path (cube2erp)")
    p.add_argument("--face-size", dest="face_size", type=int)
    p.add_argument("--height", type=int, help="output ERP height for cube2erp")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="synthesize a tilted-panorama dataset from a corpus")
    p.add_argument("corpus", help="directory of upright panoramas")
    p.add_argument("output", nargs="?", help="dataset directory to create")
    p.add_argument("--angle-range", dest="angle_range_deg", type=float)
    p.add_argument("--split", help="train/val/test fractions, e.g. 0.7/0.15/0.15")
    p.add_argument("--erp-height", dest="erp_height", type=int)
    p.add_argument("--face-size", dest="face_size", type=int)
    p.add_argument("--threads", type=int)
    _add_cfg_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="write a degraded copy of a dataset")
    p.add_argument("dataset")
    p.add_argument("spec", help="mosaic:<mask_px> or gaussian:<sigma>")
    p.add_argument("output")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("rectify", help="upright a panorama by angles or by model")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--pitch", type=float)
    p.add_argument("--roll", type=float)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("train", help="train a model on a synthesized dataset")
    p.add_argument("dataset", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_cfg_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("dataset", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", dest="eval_split", default="test",
                   help="dataset split to score (default: test)")
    p.add_argument("--degradation", help="mosaic:<mask_px> or gaussian:<sigma>")
    p.add_argument("--threads", type=int)
    _add_cfg_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=cmd_gradcheck)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
