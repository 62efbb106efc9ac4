"""Dual-branch model: ViT over cubemap faces, high-frequency conv branch
over the ERP image, cross-projection alignment, adaptive fusion, and the
skip-connected decoder that emits per-pixel sphere coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset, diffgeo, geometry
from .errors import ConfigError, DataError, NumericError
from .images import Cubemap, ErpGridSpec, ErpImage, InclinationAngles, NormalizedAngles
from .losses import LossWeights, compute_losses
from .tensorcore import (
    BatchNorm2d,
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    concat,
    global_avg_pool,
    linear,
    nearest_upsample,
    pixel_shuffle,
    pixel_unshuffle,
)
from .tensorcore import engine as E
from .tensorcore import nn as tnn

_STREAM_INIT = 4
N_STAGES = 5


@dataclass(frozen=True)
class ViTSpec:
    blocks: int = 12
    heads: int = 16
    embed: int = 768
    ffn: int = 3072
    taps: tuple = (4, 6, 8, 10, 12)

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError(f"vit blocks must be >= 1, got {self.blocks}")
        if self.embed % self.heads != 0:
            raise ConfigError(f"heads {self.heads} must divide embed {self.embed}")
        if len(self.taps) != N_STAGES:
            raise ConfigError(f"need {N_STAGES} tap indices, got {len(self.taps)}")
        if any(t < 1 or t > self.blocks for t in self.taps):
            raise ConfigError(f"taps {self.taps} outside 1..{self.blocks}")


@dataclass(frozen=True)
class ModelConfig:
    grid: ErpGridSpec = field(default_factory=lambda: ErpGridSpec(512, 256))
    face_size: int = 128
    patch: int = 16
    vit: ViTSpec = field(default_factory=ViTSpec)
    cnn_channels: tuple = (128, 128, 256, 512, 1024)
    tcf_channels: tuple = (64, 128, 256, 512, 1024)
    align_mode: str = "implicit"
    use_hfm: bool = True
    use_circular_pad: bool = True
    use_channel_attention: bool = True
    use_vit: bool = True
    ca_ratio: float = 0.8

    def __post_init__(self):
        if self.align_mode not in ("implicit", "explicit"):
            raise ConfigError(f"align_mode must be implicit|explicit, got {self.align_mode!r}")
        if self.grid.height % 32 != 0:
            raise ConfigError(f"ERP height must be divisible by 32, got {self.grid.height}")
        if self.face_size % self.patch != 0:
            raise ConfigError(f"patch {self.patch} must divide face size {self.face_size}")
        if len(self.cnn_channels) != N_STAGES or len(self.tcf_channels) != N_STAGES:
            raise ConfigError("cnn_channels and tcf_channels must list 5 stages")
        if self.cnn_channels[0] != self.cnn_channels[1]:
            raise ConfigError("stage 1 has no downsample, so cnn channels 0 and 1 must match")
        if tuple(self.tcf_channels[1:]) != tuple(self.cnn_channels[1:]):
            raise ConfigError("tcf channels must equal cnn channels for stages 2..5")
        if self.tcf_channels[0] % 2 != 0:
            raise ConfigError("decoder needs an even stage-1 fused channel count")
        if self.align_mode == "explicit":
            if self.vit.embed != 3 * self.patch * self.patch:
                raise ConfigError(
                    f"explicit alignment needs embed == 3*patch^2, got {self.vit.embed}"
                )
            if any(c % 4 != 0 for c in self.cnn_channels[:4]) or self.cnn_channels[4] % 16 != 0:
                raise ConfigError("explicit chains need stage channels divisible by 4 (16 last)")
        if not 0.0 < self.ca_ratio <= 1.0:
            raise ConfigError(f"ca_ratio must be in (0, 1], got {self.ca_ratio}")

    @property
    def n_tokens(self) -> int:
        return 6 * (self.face_size // self.patch) ** 2

    @property
    def vit_base_shape(self) -> tuple:
        h, w = self.grid.shape
        return (self.vit.embed, h // 16, w // 16)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        return replace(cls(), **overrides) if overrides else cls()

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        cfg = cls(
            grid=ErpGridSpec(128, 64),
            face_size=16,
            patch=4,
            vit=ViTSpec(blocks=2, heads=4, embed=48, ffn=192, taps=(1, 2, 2, 2, 2)),
            cnn_channels=(16, 16, 32, 64, 128),
            tcf_channels=(8, 16, 32, 64, 128),
        )
        return replace(cfg, **overrides) if overrides else cfg


def config_from_jsonable(d: dict) -> ModelConfig:
    """Rebuild a ModelConfig from its JSON form (checkpoints, manifests)."""
    d = dict(d)
    try:
        grid = ErpGridSpec(**d.pop("grid"))
        vit_raw = dict(d.pop("vit"))
        vit_raw["taps"] = tuple(vit_raw["taps"])
        vit = ViTSpec(**vit_raw)
        for key in ("cnn_channels", "tcf_channels"):
            d[key] = tuple(d[key])
        return ModelConfig(grid=grid, vit=vit, **d)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed model config: {e}") from e


def _stage_spatial(grid: ErpGridSpec) -> list:
    h, w = grid.shape
    return [(h // 4, w // 4), (h // 4, w // 4), (h // 8, w // 8),
            (h // 16, w // 16), (h // 32, w // 32)]


def shape_plan(cfg: ModelConfig) -> dict:
    """Every shape the construction is expected to satisfy, computed
    arithmetically so tests can pin them against the published tables."""
    spatial = _stage_spatial(cfg.grid)
    cnn = [(c,) + s for c, s in zip(cfg.cnn_channels, spatial)]
    tcf = [(c,) + s for c, s in zip(cfg.tcf_channels, spatial)]
    d, bh, bw = cfg.vit_base_shape
    h, w = cfg.grid.shape

    align = {}
    for i, c in enumerate(cfg.cnn_channels):
        if cfg.align_mode == "implicit":
            if i <= 1:
                chain = [(4 * c, bh, bw), (c, 2 * bh, 2 * bw),
                         (4 * c, 2 * bh, 2 * bw), (c, 4 * bh, 4 * bw)]
            elif i == 2:
                chain = [(4 * c, bh, bw), (c, 2 * bh, 2 * bw), (c, 2 * bh, 2 * bw)]
            elif i == 3:
                chain = [(c, bh, bw)]
            else:
                chain = [(c, bh // 2, bw // 2)]
        else:
            if i <= 1:
                chain = [(12, h // 2, w // 2), (c // 4, h // 2, w // 2), (c, h // 4, w // 4)]
            elif i == 2:
                chain = [(48, h // 4, w // 4), (c // 4, h // 4, w // 4), (c, h // 8, w // 8)]
            elif i == 3:
                chain = [(192, h // 8, w // 8), (c // 4, h // 8, w // 8), (c, h // 16, w // 16)]
            else:
                chain = [(192, h // 8, w // 8), (c // 16, h // 8, w // 8), (c, h // 32, w // 32)]
        if chain[-1] != cnn[i]:
            raise ConfigError(f"alignment chain for stage {i + 1} ends at {chain[-1]}, "
                              f"cnn expects {cnn[i]}")
        align[i] = chain

    t = cfg.tcf_channels
    s = spatial
    decoder = [
        (t[3],) + s[4], (t[3],) + s[3], (2 * t[3],) + s[3], (t[3],) + s[3],
        (t[2],) + s[3], (t[2],) + s[2], (2 * t[2],) + s[2], (t[2],) + s[2],
        (t[1],) + s[2], (t[1],) + s[1], (2 * t[1],) + s[1], (t[1],) + s[1],
        (t[0],) + s[1], (2 * t[0],) + s[1], (t[0],) + s[1],
        ((t[0] // 2) * 16,) + s[1], (t[0] // 2, h, w), (t[0] // 2, h, w), (3, h, w),
    ]
    return {
        "tokens": (cfg.n_tokens, cfg.vit.embed),
        "vit_base": cfg.vit_base_shape if cfg.align_mode == "implicit" else (3, h, w),
        "cnn": cnn,
        "tcf": tcf,
        "align": align,
        "decoder": decoder,
        "lut": (3, h, w),
    }


@dataclass
class ModelOutput:
    angles_norm_t: Tensor
    lut_pred: Tensor
    upright_pred: Tensor

    @property
    def angles_norm(self) -> NormalizedAngles:
        p, r = (float(v) for v in self.angles_norm_t.data)
        return NormalizedAngles(p, r)

    @property
    def angles(self) -> InclinationAngles:
        return geometry.denormalize_angles(self.angles_norm)


# ---------------------------------------------------------------------------
# global branch

class PatchEmbed(Module):
    """Face-major, row-major patch tokens through a learned embedding."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        p = cfg.patch
        din = 3 * p * p
        scale = 1.0 / np.sqrt(din)
        self.patch = p
        self.face_size = cfg.face_size
        self.weight = Parameter(rng.uniform(-scale, scale, (cfg.vit.embed, din)).astype(dtype))
        self.bias = Parameter(np.zeros(cfg.vit.embed, dtype=dtype))
        self.pos = Parameter(rng.normal(0.0, 0.02, (cfg.n_tokens, cfg.vit.embed)).astype(dtype))

    @staticmethod
    def to_patches(faces: np.ndarray, patch: int) -> np.ndarray:
        """(6, 3, S, S) -> (N_p, 3*patch^2), channel-major inside a patch."""
        _, c, s, _ = faces.shape
        n = s // patch
        x = faces.reshape(6, c, n, patch, n, patch)
        x = x.transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(x).reshape(6 * n * n, c * patch * patch)

    @staticmethod
    def tokens_to_faces(tokens: Tensor, patch: int, face_size: int) -> Tensor:
        """Differentiable inverse of to_patches for (N_p, 3*patch^2) tokens."""
        n = face_size // patch
        x = E.reshape(tokens, (6, n, n, 3, patch, patch))
        x = E.transpose(x, (0, 3, 1, 4, 2, 5))
        return E.reshape(x, (6, 3, face_size, face_size))

    def forward(self, faces: np.ndarray) -> Tensor:
        patches = Tensor(self.to_patches(faces, self.patch))
        return linear(patches, self.weight, self.bias) + self.pos


class ViTBlock(Module):
    """Pre-norm transformer block: MHA and a gelu MLP, both residual."""

    def __init__(self, dim: int, heads: int, ffn: int, rng, dtype):
        self.ln1 = LayerNorm(dim, axis=-1, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, axis=-1, dtype=dtype)
        self.fc1 = Linear(dim, ffn, rng, dtype=dtype)
        self.fc2 = Linear(ffn, dim, rng, dtype=dtype)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(E.gelu(self.fc1(self.ln2(x))))


class ViTEncoder(Module):
    def __init__(self, spec: ViTSpec, rng, dtype):
        self.taps = spec.taps
        self.blocks = [ViTBlock(spec.embed, spec.heads, spec.ffn, rng, dtype)
                       for _ in range(spec.blocks)]

    def forward(self, tokens) -> list:
        by_block = {}
        x = tokens
        for bi, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            by_block[bi] = x
        return [by_block[t] for t in self.taps]


# ---------------------------------------------------------------------------
# local branch

class HFEnhance(Module):
    """Adds a learned projection of the high-pass residual onto the input.

    The per-channel scale starts at zero, so a freshly built module is the
    identity map; training opens the enhancement path gradually.
    """

    def __init__(self, channels: int, rng, dtype, circular: bool):
        self.proj = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.scale = Parameter(np.zeros((channels, 1, 1), dtype=dtype))
        k = np.full((channels, 1, 3, 3), 1.0 / 9.0, dtype=dtype)
        k.setflags(write=False)
        self._blur_w = k
        self._channels = channels
        self._pad = tnn.PAD_CIRC_H_REPL_V if circular else tnn.PAD_ZERO

    def forward(self, x):
        blur = tnn.conv2d(x, Tensor(self._blur_w), groups=self._channels,
                          pad_mode=self._pad)
        h = x - blur
        return x + self.scale * self.proj(h)


class HFConvBlock(Module):
    """Inverted-bottleneck conv block with a high-frequency skip branch."""

    def __init__(self, channels: int, rng, dtype, use_hfm: bool, circular: bool):
        pad = tnn.PAD_CIRC_H if circular else tnn.PAD_ZERO
        self.dw = Conv2d(channels, channels, 7, rng, pad_mode=pad, groups=channels, dtype=dtype)
        self.ln = LayerNorm(channels, axis=0, dtype=dtype)
        self.pw1 = Conv2d(channels, 4 * channels, 1, rng, dtype=dtype)
        self.pw2 = Conv2d(4 * channels, channels, 1, rng, dtype=dtype)
        self.hf = HFEnhance(channels, rng, dtype, circular) if use_hfm else None

    def forward(self, x):
        y = self.pw2(E.gelu(self.pw1(self.ln(self.dw(x)))))
        skip = self.hf(x) if self.hf is not None else x
        return y + skip


class LocalEncoder(Module):
    """Stem plus four stages; returns all five feature maps."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        ch = cfg.cnn_channels
        pad = tnn.PAD_CIRC_H if cfg.use_circular_pad else tnn.PAD_ZERO
        self.stem = Conv2d(3, ch[0], 4, rng, stride=4, dtype=dtype)
        self.downs = [None] + [
            Conv2d(ch[i], ch[i + 1], 2, rng, stride=2, dtype=dtype) for i in range(1, 4)
        ]
        self.blocks = [
            HFConvBlock(ch[i], rng, dtype, cfg.use_hfm, cfg.use_circular_pad)
            for i in range(1, 5)
        ]
        self.pad = pad

    def forward(self, erp) -> list:
        x = self.stem(erp)
        feats = [x]
        for down, blk in zip(self.downs, self.blocks):
            if down is not None:
                x = down(x)
            x = blk(x)
            feats.append(x)
        return feats


class AngleHead(Module):
    def __init__(self, channels: int, rng, dtype):
        self.lin = Linear(channels, 2, rng, dtype=dtype)
        # zero final layer: the head starts at the neutral 0 degree prior
        # instead of a saturated sigmoid driven by random pooled features
        self.lin.weight.data[:] = 0.0
        self._channels = channels

    def forward(self, f4) -> Tensor:
        g = E.reshape(global_avg_pool(f4), (1, self._channels))
        return E.sigmoid(E.reshape(self.lin(g), (2,)))


# ---------------------------------------------------------------------------
# alignment

class ImplicitAlign(Module):
    """Token-axis projection to an ERP-like base map, then per-stage resizing."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        d, bh, bw = cfg.vit_base_shape
        self.base_shape = (d, bh, bw)
        self.token_proj = Linear(cfg.n_tokens, bh * bw, rng, dtype=dtype)
        self.chains = []
        for i, c in enumerate(cfg.cnn_channels):
            if i <= 1:
                chain = [("conv", Conv2d(d, 4 * c, 1, rng, dtype=dtype)), ("ps", 2),
                         ("conv", Conv2d(c, 4 * c, 1, rng, dtype=dtype)), ("ps", 2)]
            elif i == 2:
                chain = [("conv", Conv2d(d, 4 * c, 1, rng, dtype=dtype)), ("ps", 2),
                         ("conv", Conv2d(c, c, 1, rng, dtype=dtype))]
            elif i == 3:
                chain = [("conv", Conv2d(d, c, 1, rng, dtype=dtype))]
            else:
                chain = [("conv", Conv2d(d, c, 2, rng, stride=2, dtype=dtype))]
            self.chains.append([m for _, m in chain if isinstance(m, Module)])
            setattr(self, f"_chain_{i}", chain)

    def base_map(self, tap) -> Tensor:
        y = self.token_proj(E.transpose(tap))          # (D, bh*bw)
        return E.reshape(y, self.base_shape)

    def forward(self, tap, stage: int) -> Tensor:
        x = self.base_map(tap)
        for kind, arg in getattr(self, f"_chain_{stage}"):
            x = arg(x) if kind == "conv" else pixel_shuffle(x, arg)
        return x


class ExplicitAlign(Module):
    """Inverse patchify to cube faces, geometric reprojection, then resizing."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.patch = cfg.patch
        self.face_size = cfg.face_size
        self.grid = cfg.grid
        for i, c in enumerate(cfg.cnn_channels):
            if i <= 1:
                chain = [("pu", 2), ("conv", Conv2d(12, c // 4, 1, rng, dtype=dtype)), ("pu", 2)]
            elif i == 2:
                chain = [("pu", 4), ("conv", Conv2d(48, c // 4, 1, rng, dtype=dtype)), ("pu", 2)]
            elif i == 3:
                chain = [("pu", 8), ("conv", Conv2d(192, c // 4, 1, rng, dtype=dtype)), ("pu", 2)]
            else:
                chain = [("pu", 8), ("conv", Conv2d(192, c // 16, 1, rng, dtype=dtype)), ("pu", 4)]
            setattr(self, f"chain_{i}", [m for _, m in chain if isinstance(m, Module)])
            setattr(self, f"_chain_{i}", chain)

    def base_map(self, tap) -> Tensor:
        faces = PatchEmbed.tokens_to_faces(tap, self.patch, self.face_size)
        return diffgeo.cubemap_to_erp_diff(faces, self.grid)

    def forward(self, tap, stage: int) -> Tensor:
        x = self.base_map(tap)
        for kind, arg in getattr(self, f"_chain_{stage}"):
            x = arg(x) if kind == "conv" else pixel_unshuffle(x, arg)
        return x


# ---------------------------------------------------------------------------
# fusion

class FuseAdaptive(Module):
    """Attention-weighted blend of the two branches plus residual refinement."""

    def __init__(self, channels: int, rng, dtype, circular: bool):
        pad = tnn.PAD_CIRC_H if circular else tnn.PAD_ZERO
        self.a3 = Conv2d(channels, channels, 3, rng, pad_mode=pad, dtype=dtype)
        self.a1 = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.f3 = Conv2d(channels, channels, 3, rng, pad_mode=pad, dtype=dtype)
        self.r3a = Conv2d(channels, channels, 3, rng, pad_mode=pad, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.r3b = Conv2d(channels, channels, 3, rng, pad_mode=pad, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, tf, cf):
        if tf.data.shape != cf.data.shape:
            raise DataError(f"fusion inputs differ: {tf.data.shape} vs {cf.data.shape}")
        attn = E.sigmoid(self.a1(E.relu(self.a3(tf + cf))))
        fused = tf * attn + cf * (1.0 - attn)
        fused = E.relu(self.f3(fused))
        res = self.bn2(self.r3b(E.relu(self.bn1(self.r3a(fused)))))
        return E.relu(fused + res)


class ChannelAttention(Module):
    def __init__(self, channels: int, ratio: float, rng, dtype):
        hidden = max(1, int(round(ratio * channels)))
        self.c1 = Conv2d(channels, hidden, 1, rng, dtype=dtype)
        self.c2 = Conv2d(hidden, channels, 1, rng, dtype=dtype)
        self.hidden = hidden

    def forward(self, x):
        w = E.sigmoid(self.c2(E.relu(self.c1(global_avg_pool(x)))))
        return x * w


# ---------------------------------------------------------------------------
# decoder

class DecodeLut(Module):
    """Coarse-to-fine decoder; three upsample+skip stages, one skip-only
    stage, sub-pixel upscale by 4, and an affine sigmoid onto (-1, 1)."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        t = cfg.tcf_channels
        pad = tnn.PAD_CIRC_H if cfg.use_circular_pad else tnn.PAD_ZERO

        def c3(cin, cout):
            return Conv2d(cin, cout, 3, rng, pad_mode=pad, dtype=dtype)

        self.conv02 = c3(t[4], t[3])
        self.conv05 = c3(2 * t[3], t[3])
        self.conv06 = c3(t[3], t[2])
        self.conv09 = c3(2 * t[2], t[2])
        self.conv10 = c3(t[2], t[1])
        self.conv13 = c3(2 * t[1], t[1])
        self.conv14 = c3(t[1], t[0])
        self.conv16 = c3(2 * t[0], t[0])
        self.conv17 = c3(t[0], (t[0] // 2) * 16)
        self.conv19 = c3(t[0] // 2, t[0] // 2)
        self.conv20 = c3(t[0] // 2, 3)
        # small final init keeps the output sigmoid unsaturated so coordinate
        # gradients flow from the first step
        self.conv20.weight.data *= 0.05

    def forward(self, tcf: list) -> Tensor:
        x = E.elu(self.conv02(tcf[4]))
        x = nearest_upsample(x, 2)
        x = concat([x, tcf[3]], axis=0)
        x = E.elu(self.conv05(x))
        x = E.elu(self.conv06(x))
        x = nearest_upsample(x, 2)
        x = concat([x, tcf[2]], axis=0)
        x = E.elu(self.conv09(x))
        x = E.elu(self.conv10(x))
        x = nearest_upsample(x, 2)
        x = concat([x, tcf[1]], axis=0)
        x = E.elu(self.conv13(x))
        x = E.elu(self.conv14(x))
        x = concat([x, tcf[0]], axis=0)
        x = E.elu(self.conv16(x))
        x = E.elu(self.conv17(x))
        x = pixel_shuffle(x, 4)
        x = E.elu(self.conv19(x))
        x = self.conv20(x)
        return 2.0 * E.sigmoid(x) - 1.0


# ---------------------------------------------------------------------------
# full model

class PanoRectModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = dataset.DEFAULT_SEED,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.plan = shape_plan(cfg)
        rng = dataset.stream_rng(seed, _STREAM_INIT, 0)

        self.local = LocalEncoder(cfg, rng, dtype)
        self.angle_head = AngleHead(cfg.cnn_channels[4], rng, dtype)
        if cfg.use_vit:
            self.patch_embed = PatchEmbed(cfg, rng, dtype)
            self.vit = ViTEncoder(cfg.vit, rng, dtype)
            align_cls = ImplicitAlign if cfg.align_mode == "implicit" else ExplicitAlign
            self.align = align_cls(cfg, rng, dtype)
        else:
            self.patch_embed = None
            self.vit = None
            self.align = None
        self.fuse = [FuseAdaptive(c, rng, dtype, cfg.use_circular_pad)
                     for c in cfg.cnn_channels]
        self.ca = ([ChannelAttention(c, cfg.ca_ratio, rng, dtype)
                    for c in cfg.cnn_channels] if cfg.use_channel_attention else None)
        self.stage1_adapter = Conv2d(cfg.cnn_channels[0], cfg.tcf_channels[0], 1, rng,
                                     dtype=dtype)
        self.decoder = DecodeLut(cfg, rng, dtype)

    def _check_inputs(self, erp: np.ndarray, cube: np.ndarray):
        if erp.shape != (3,) + self.cfg.grid.shape:
            raise DataError(f"ERP input {erp.shape} does not match configured "
                            f"{(3,) + self.cfg.grid.shape}")
        s = self.cfg.face_size
        if cube.shape != (6, 3, s, s):
            raise DataError(f"cubemap input {cube.shape} does not match (6, 3, {s}, {s})")

    def fused_features(self, erp: np.ndarray, cube: np.ndarray):
        """Local features, angle Tensor, and the five fused maps."""
        feats = self.local(Tensor(np.asarray(erp, dtype=self.dtype)))
        angles_norm = self.angle_head(feats[4])
        taps = None
        if self.cfg.use_vit:
            taps = self.vit(self.patch_embed(np.asarray(cube, dtype=self.dtype)))
        tcfs = []
        for i in range(N_STAGES):
            cf = feats[i]
            if taps is not None:
                tf = self.align(taps[i], i)
            else:
                tf = Tensor(np.zeros_like(cf.data))
            y = self.fuse[i](tf, cf)
            if self.ca is not None:
                y = self.ca[i](y)
            if i == 0:
                y = self.stage1_adapter(y)
            tcfs.append(y)
        return feats, angles_norm, tcfs

    def forward(self, erp, cube) -> ModelOutput:
        erp = erp.data if isinstance(erp, ErpImage) else np.asarray(erp)
        cube = cube.faces if isinstance(cube, Cubemap) else np.asarray(cube)
        self._check_inputs(erp, cube)
        _, angles_norm, tcfs = self.fused_features(erp, cube)
        lut = self.decoder(tcfs)
        upright = diffgeo.apply_lut_diff(
            Tensor(np.asarray(erp, dtype=self.dtype)), lut, self.cfg.grid
        )
        return ModelOutput(angles_norm_t=angles_norm, lut_pred=lut, upright_pred=upright)


def train_step(model: PanoRectModel, optimizer, batch: list,
               weights: LossWeights | None = None, backend=None) -> dict:
    """One optimization step over a batch of Samples; returns float losses.

    Samples are evaluated sequentially and averaged, so results are
    deterministic for a given seed and batch order.
    """
    from .tensorcore import backward as run_backward

    if not batch:
        raise ValueError("empty batch")
    model.train()
    optimizer.zero_grad()
    weights = weights or LossWeights()
    sums = {}
    for sample in batch:
        out = model(sample.nonupright_erp, sample.nonupright_cubemap)
        parts = compute_losses(out, sample, weights, backend)
        for key, val in parts.items():
            sums[key] = val if key not in sums else sums[key] + val
    n = float(len(batch))
    means = {k: v / n for k, v in sums.items()}
    total = means["total"]
    record = {k: float(v.data) for k, v in means.items()}
    if not all(np.isfinite(v) for v in record.values()):
        raise NumericError(f"non-finite training loss: {record}")
    run_backward(total)
    optimizer.step()
    return record
