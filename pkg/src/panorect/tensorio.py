"""On-disk formats: binary tensor container and 8-bit PNG images.

Container layout (all integers little-endian):

    offset  size  field
    0       4     magic b"PRT1"
    4       1     format version (1)
    5       1     dtype code: 1=float32, 2=float64, 3=uint8, 4=int64
    6       1     ndim
    7       1     reserved (0)
    8       8*n   dims as uint64
    ...     *     payload, C-order, little-endian
    end-4   4     CRC32 (zlib) over everything before it

The CRC covers the header as well as the payload, so any corruption is
detected on read.
"""
from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

MAGIC = b"PRT1"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i8"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise DataError(f"unsupported container dtype {arr.dtype}")
    head = MAGIC + struct.pack("<BBBB", VERSION, _DTYPE_CODES[dt], arr.ndim, 0)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = arr.astype(dt, copy=False).tobytes()
    blob = head + body
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def tensor_from_stream(stream, label: str = "container") -> np.ndarray:
    """Read one tensor record from a binary stream (several may be packed)."""
    head = stream.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise DataError(f"{label}: not a tensor container (bad magic)")
    version, code, ndim, _ = struct.unpack("<BBBB", head[4:8])
    if version != VERSION:
        raise DataError(f"{label}: unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise DataError(f"{label}: unknown dtype code {code}")
    dims = stream.read(8 * ndim)
    if len(dims) != 8 * ndim:
        raise DataError(f"{label}: truncated container header")
    shape = struct.unpack(f"<{ndim}Q", dims)
    dt = _CODE_DTYPES[code]
    expect = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = stream.read(expect)
    tail = stream.read(4)
    if len(payload) != expect or len(tail) != 4:
        raise DataError(f"{label}: truncated container payload")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(head + dims + payload) & 0xFFFFFFFF != crc:
        raise DataError(f"{label}: tensor container checksum mismatch")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DataError("not a tensor container (bad magic)")
    # whole-file CRC first: any bit flip reports as a checksum mismatch
    # rather than a confusing parse error from a corrupted header
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise DataError("tensor container checksum mismatch")
    stream = io.BytesIO(blob)
    arr = tensor_from_stream(stream)
    if stream.read(1):
        raise DataError("trailing bytes after tensor container")
    return arr


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing tensor file: {path}")
    return tensor_from_bytes(path.read_bytes())


def write_png(path: str | Path, img: np.ndarray) -> None:
    """Save (C, H, W) float [0, 1] as 8-bit PNG (C must be 1 or 3)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"PNG writer expects (1|3, H, W), got {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    q = np.moveaxis(q, 0, -1)
    if q.shape[-1] == 1:
        q = q[..., 0]
    Image.fromarray(q).save(path, format="PNG")


def read_png(path: str | Path, dtype=np.float32) -> np.ndarray:
    """Load a PNG as channel-first float in [0, 1] (grayscale promoted to 3ch)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=dtype) / dtype(255.0)
    except (OSError, ValueError) as e:
        raise DataError(f"unreadable image {path}: {e}") from e
    return np.moveaxis(arr, -1, 0)
