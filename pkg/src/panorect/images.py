"""Lightweight containers for panoramic images, cubemaps and coordinate LUTs.

All pixel data is channel-first float ndarray. Containers validate their
invariants on creation so downstream code can assume them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ErpGridSpec:
    """Equirectangular raster: width must be exactly twice the height."""

    width: int
    height: int

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise DataError(f"ERP grid must be 2:1, got {self.width}x{self.height}")
        if self.height < 2 or self.height % 2 != 0:
            raise DataError(f"ERP height must be even and >= 2, got {self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class InclinationAngles:
    """Camera tilt in degrees. Pitch and roll each live in [-90, 90]."""

    pitch_deg: float
    roll_deg: float

    def __post_init__(self):
        for name in ("pitch_deg", "roll_deg"):
            v = getattr(self, name)
            if not np.isfinite(v) or abs(v) > 90.0:
                raise DataError(f"{name} out of [-90, 90]: {v!r}")

    def __iter__(self):
        return iter((self.pitch_deg, self.roll_deg))


@dataclass(frozen=True)
class NormalizedAngles:
    """Tilt mapped to [0, 1] per axis; 0.5 is upright."""

    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("pitch", "roll"):
            v = getattr(self, name)
            if not np.isfinite(v) or not 0.0 <= v <= 1.0:
                raise DataError(f"normalized {name} out of [0, 1]: {v!r}")

    def __iter__(self):
        return iter((self.pitch, self.roll))


@dataclass(frozen=True)
class CubeCoord:
    """Continuous position on one cube face; u, v in [0, face_size)."""

    face: int
    u: float
    v: float

    def __post_init__(self):
        if not 0 <= self.face < 6:
            raise DataError(f"face index out of range: {self.face}")


class ErpImage:
    """Equirectangular image, channel-first (C, H, W), values in [0, 1].

    Values are clipped into range on creation; shape must match a valid
    2:1 grid.
    """

    __slots__ = ("data", "grid")

    def __init__(self, data: np.ndarray, copy: bool = False):
        data = np.asarray(data)
        if data.ndim != 3:
            raise DataError(f"ERP image must be (C, H, W), got shape {data.shape}")
        c, h, w = data.shape
        self.grid = ErpGridSpec(width=w, height=h)
        if not np.isfinite(data).all():
            raise DataError("ERP image contains non-finite values")
        if copy or data.min() < 0.0 or data.max() > 1.0:
            data = np.clip(data, 0.0, 1.0)
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, ErpImage) and np.array_equal(self.data, other.data)


class Cubemap:
    """Six square faces, (6, C, S, S), ordered [+x, -x, +y, -y, +z, -z]."""

    __slots__ = ("faces",)

    def __init__(self, faces: np.ndarray):
        faces = np.asarray(faces)
        if faces.ndim != 4 or faces.shape[0] != 6 or faces.shape[2] != faces.shape[3]:
            raise DataError(f"cubemap must be (6, C, S, S), got shape {faces.shape}")
        if not np.isfinite(faces).all():
            raise DataError("cubemap contains non-finite values")
        self.faces = faces

    @property
    def face_size(self) -> int:
        return self.faces.shape[-1]

    def __eq__(self, other):
        return isinstance(other, Cubemap) and np.array_equal(self.faces, other.faces)


class Lut3D:
    """Per-pixel 3D sphere coordinates, shape (3, H, W) on an ERP grid."""

    __slots__ = ("coords", "grid")

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords)
        if coords.ndim != 3 or coords.shape[0] != 3:
            raise DataError(f"LUT must be (3, H, W), got shape {coords.shape}")
        if not np.isfinite(coords).all():
            raise DataError("LUT contains non-finite values")
        self.coords = coords
        self.grid = ErpGridSpec(width=coords.shape[2], height=coords.shape[1])

    def norms(self) -> np.ndarray:
        return np.sqrt((self.coords.astype(np.float64) ** 2).sum(axis=0))

    def __eq__(self, other):
        return isinstance(other, Lut3D) and np.array_equal(self.coords, other.coords)
