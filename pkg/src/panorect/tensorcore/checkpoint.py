"""Checkpoint files: config + named parameter tensors + optional Adam state."""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..tensorio import tensor_from_stream, tensor_to_bytes
from ..util import config_hash

_MAGIC = b"PRCK"
_VERSION = 1


@dataclass
class CheckpointData:
    config: dict
    config_hash: str
    step: int
    params: dict
    optimizer: dict | None


def save_checkpoint(path, named_params: dict, config: dict, step: int = 0,
                    optimizer=None) -> None:
    """Write parameters (name -> Tensor or ndarray) with their config."""
    names = list(named_params.keys())
    manifest = {
        "version": _VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "step": int(step),
        "params": names,
        "optimizer": None,
    }
    opt_state = None
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        manifest["optimizer"] = {
            "t": opt_state["t"],
            "lr": opt_state["lr"],
            "betas": opt_state["betas"],
            "eps": opt_state["eps"],
        }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IQ", _VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))
    for name in names:
        t = named_params[name]
        arr = t.data if hasattr(t, "data") else np.asarray(t)
        buf.write(tensor_to_bytes(arr))
    if opt_state is not None:
        for key in ("m", "v"):
            for arr in opt_state[key]:
                buf.write(tensor_to_bytes(np.asarray(arr)))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> CheckpointData:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    if buf.read(4) != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack("<IQ", buf.read(12))
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    blob = buf.read(mlen)
    (crc,) = struct.unpack("<I", buf.read(4))
    if crc != zlib.crc32(blob) & 0xFFFFFFFF:
        raise DataError(f"{path}: checkpoint manifest corrupted")
    manifest = json.loads(blob.decode("utf-8"))
    params = {}
    for name in manifest["params"]:
        params[name] = tensor_from_stream(buf, label=f"{path}:{name}")
    opt = None
    if manifest["optimizer"] is not None:
        n = len(manifest["params"])
        m = [tensor_from_stream(buf, label=f"{path}:adam.m") for _ in range(n)]
        v = [tensor_from_stream(buf, label=f"{path}:adam.v") for _ in range(n)]
        opt = dict(manifest["optimizer"], m=m, v=v)
    return CheckpointData(
        config=manifest["config"],
        config_hash=manifest["config_hash"],
        step=manifest["step"],
        params=params,
        optimizer=opt,
    )


def restore_parameters(named_params: dict, ckpt: CheckpointData) -> None:
    """Copy checkpoint arrays into live parameters, checking names and shapes."""
    live = dict(named_params)
    missing = [n for n in live if n not in ckpt.params]
    extra = [n for n in ckpt.params if n not in live]
    if missing or extra:
        raise DataError(
            f"checkpoint parameter mismatch: missing={missing[:3]} extra={extra[:3]}"
        )
    for name, p in live.items():
        arr = ckpt.params[name]
        if arr.shape != p.data.shape:
            raise DataError(
                f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype, copy=True)
