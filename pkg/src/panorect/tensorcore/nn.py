"""Neural-net ops and parameter-holding modules."""
from __future__ import annotations

import numpy as np

from ..resample import bilinear_kernel
from . import engine as T
from .engine import Tensor, _make, _wrap

PAD_ZERO = "zero"
PAD_CIRC_H = "circular_h_zero_v"
PAD_CIRC_H_REPL_V = "circular_h_replicate_v"
_PAD_MODES = (PAD_ZERO, PAD_CIRC_H, PAD_CIRC_H_REPL_V)


# ---------------------------------------------------------------------------
# modules

class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class Module:
    """Tiny module base: named parameters, train/eval flag, zero_grad."""

    training: bool = True

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Parameter):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# ---------------------------------------------------------------------------
# padding and convolution

def pad2d(x, pad: tuple[int, int, int, int], mode: str = PAD_CIRC_H):
    """Pad (C, H, W) by (top, bottom, left, right).

    Horizontal padding wraps circularly except in zero mode; vertical
    padding is zero, or edge-replicated in the replicate mode.
    """
    if mode not in _PAD_MODES:
        raise ValueError(f"unknown pad mode {mode!r}")
    x = _wrap(x)
    pt, pb, pl, pr = pad
    c, h, w = x.data.shape
    # index maps handle pads of any size, including pads wider than the input
    row = np.arange(-pt, h + pb)
    col = np.arange(-pl, w + pr)
    if mode == PAD_CIRC_H_REPL_V:
        row_src = np.clip(row, 0, h - 1)
        row_ok = np.ones(row.shape, dtype=bool)
    else:
        row_ok = (row >= 0) & (row < h)
        row_src = np.where(row_ok, row, 0)
    if mode == PAD_ZERO:
        col_ok = (col >= 0) & (col < w)
        col_src = np.where(col_ok, col, 0)
    else:
        col_src = col % w
        col_ok = np.ones(col.shape, dtype=bool)
    mask = (row_ok[:, None] & col_ok[None, :])
    out = x.data[:, row_src[:, None], col_src[None, :]]
    if not mask.all():
        out = out * mask

    def bwd(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        np.add.at(
            gx,
            (slice(None), row_src[:, None], col_src[None, :]),
            g * mask if not mask.all() else g,
        )
        return (gx,)

    return _make(out, (x,), bwd)


def _conv_valid(x, w, stride: tuple[int, int], groups: int):
    """Valid cross-correlation via im2col; x (C,H,W), w (O,C/g,kh,kw)."""
    x, w = _wrap(x), _wrap(w)
    c, h, ww = x.data.shape
    o, cg, kh, kw = w.data.shape
    sh, sw = stride
    if c != cg * groups or o % groups != 0:
        raise ValueError(
            f"conv shapes inconsistent: x has {c} channels, w is {w.data.shape}, groups={groups}"
        )
    if h < kh or ww < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{ww}")
    ho = (h - kh) // sh + 1
    wo = (ww - kw) // sw + 1
    og = o // groups

    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]                       # (C, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c, kh * kw)

    w_mat = w.data.reshape(o, cg * kh * kw)
    out = np.empty((ho * wo, o), dtype=np.result_type(x.data, w.data))
    for gi in range(groups):
        cs, os_ = gi * cg, gi * og
        out[:, os_ : os_ + og] = (
            cols[:, cs : cs + cg].reshape(ho * wo, cg * kh * kw) @ w_mat[os_ : os_ + og].T
        )
    out = out.T.reshape(o, ho, wo)

    def bwd(g):
        g_mat = g.reshape(o, ho * wo).T            # (HoWo, O)
        gw = np.empty_like(w.data)
        gcols = np.empty_like(cols)
        for gi in range(groups):
            cs, os_ = gi * cg, gi * og
            cols_g = cols[:, cs : cs + cg].reshape(ho * wo, cg * kh * kw)
            g_g = g_mat[:, os_ : os_ + og]
            gw[os_ : os_ + og] = (g_g.T @ cols_g).reshape(og, cg, kh, kw)
            gcols[:, cs : cs + cg] = (g_g @ w_mat[os_ : os_ + og]).reshape(ho * wo, cg, kh * kw)
        gc = gcols.reshape(ho, wo, c, kh, kw)
        gx = np.zeros_like(x.data)
        for u in range(kh):
            for v in range(kw):
                gx[:, u : u + ho * sh : sh, v : v + wo * sw : sw] += gc[:, :, :, u, v].transpose(2, 0, 1)
        return gx, gw

    return _make(out, (x, w), bwd)


def conv2d(x, w, b=None, stride: int | tuple = 1, pad_mode: str = PAD_CIRC_H,
           groups: int = 1, padding: int | tuple | None = None):
    """2D cross-correlation on (C, H, W).

    padding None picks "same" amounts for odd kernels and 0 for even ones
    (the patchify/downsample convs). pad_mode selects the boundary rule.
    """
    w = _wrap(w)
    kh, kw = w.data.shape[-2:]
    if isinstance(stride, int):
        stride = (stride, stride)
    if padding is None:
        ph = 0 if kh % 2 == 0 else (kh - 1) // 2
        pw = 0 if kw % 2 == 0 else (kw - 1) // 2
    elif isinstance(padding, int):
        ph = pw = padding
    else:
        ph, pw = padding
    if ph or pw:
        x = pad2d(x, (ph, ph, pw, pw), mode=pad_mode)
    out = _conv_valid(x, w, stride, groups)
    if b is not None:
        b = _wrap(b)
        out = out + T.reshape(b, (b.data.shape[0], 1, 1))
    return out


def linear(x, w, b=None):
    """Affine map on the last axis: x @ w.T + b with w (Dout, Din)."""
    out = T.matmul(_wrap(x), T.transpose(_wrap(w)))
    if b is not None:
        out = out + _wrap(b)
    return out


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x, weight=None, bias=None, axis: int = -1, eps: float = 1e-5):
    """Normalize over one axis; affine params broadcast against x."""
    x = _wrap(x)
    mu = T.mean(x, axis=axis, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, axis=axis, keepdims=True)
    out = xc / T.sqrt(var + eps)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


class LayerNorm(Module):
    """Learnable layer norm over the given axis of an unbatched tensor.

    axis=-1 suits token matrices (N, D); axis=0 normalizes the channel
    axis of (C, H, W) maps per spatial position.
    """

    def __init__(self, dim: int, axis: int = -1, eps: float = 1e-5, dtype=np.float32):
        self.axis = axis
        self.eps = eps
        if axis == -1:
            shape = (dim,)
        elif axis == 0:
            shape = (dim, 1, 1)
        else:
            raise ValueError(f"unsupported layer_norm axis {axis}")
        self.weight = Parameter(np.ones(shape, dtype=dtype))
        self.bias = Parameter(np.zeros(shape, dtype=dtype))

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, axis=self.axis, eps=self.eps)


class BatchNorm2d(Module):
    """Batch norm over the spatial axes of one (C, H, W) map.

    Train mode normalizes by the current map's per-channel statistics and
    updates running ones; eval mode applies the running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones((channels, 1, 1), dtype=dtype))
        self.bias = Parameter(np.zeros((channels, 1, 1), dtype=dtype))
        self.running_mean = np.zeros((channels, 1, 1), dtype=dtype)
        self.running_var = np.ones((channels, 1, 1), dtype=dtype)

    def forward(self, x):
        x = _wrap(x)
        if self.training:
            mu = T.mean(x, axis=(1, 2), keepdims=True)
            xc = x - mu
            var = T.mean(xc * xc, axis=(1, 2), keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.astype(
                self.running_mean.dtype
            )
            self.running_var = (1 - m) * self.running_var + m * var.data.astype(
                self.running_var.dtype
            )
            xhat = xc / T.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.weight + self.bias


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        scale = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-scale, scale, (d_out, d_in)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad_mode: str = PAD_CIRC_H, groups: int = 1,
                 dtype=np.float32, init: str = "he"):
        cg = c_in // groups
        if cg * groups != c_in:
            raise ValueError(f"groups {groups} does not divide channels {c_in}")
        fan_in = cg * k * k
        if init == "he":
            std = np.sqrt(2.0 / fan_in)
            w = rng.normal(0.0, std, (c_out, cg, k, k))
        elif init == "zero":
            w = np.zeros((c_out, cg, k, k))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.pad_mode = pad_mode
        self.groups = groups

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      pad_mode=self.pad_mode, groups=self.groups)


class MultiHeadAttention(Module):
    """Standard scaled dot-product attention over (N, D) tokens."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise ValueError(f"heads {heads} must divide dim {dim}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)
        self.last_attn: np.ndarray | None = None

    def forward(self, x):
        x = _wrap(x)
        n, d = x.data.shape
        h, hd = self.heads, self.head_dim

        def split(t):  # (N, D) -> (h, N, hd)
            return T.transpose(T.reshape(t, (n, h, hd)), (1, 0, 2))

        q = split(self.wq(x))
        k = split(self.wk(x))
        v = split(self.wv(x))
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(hd))
        attn = T.softmax(scores, axis=-1)
        self.last_attn = attn.data
        ctx = T.matmul(attn, v)                       # (h, N, hd)
        ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (n, d))
        return self.wo(ctx)


def multi_head_attention(x, heads: int, rng: np.random.Generator | None = None):
    """Functional convenience wrapper: fresh random projections."""
    x = _wrap(x)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=0))
    mha = MultiHeadAttention(x.data.shape[-1], heads, rng, dtype=x.data.dtype)
    return mha(x)


# ---------------------------------------------------------------------------
# rearrangement and resizing

def pixel_shuffle(x, s: int):
    """( C*s^2, H, W ) -> ( C, H*s, W*s ), sub-pixel upsample order."""
    x = _wrap(x)
    c2, h, w = x.data.shape
    if c2 % (s * s) != 0:
        raise ValueError(f"channels {c2} not divisible by {s}^2")
    c = c2 // (s * s)
    out = T.reshape(x, (c, s, s, h, w))
    out = T.transpose(out, (0, 3, 1, 4, 2))
    return T.reshape(out, (c, h * s, w * s))


def pixel_unshuffle(x, s: int):
    """( C, H, W ) -> ( C*s^2, H/s, W/s ); inverse of pixel_shuffle."""
    x = _wrap(x)
    c, h, w = x.data.shape
    if h % s != 0 or w % s != 0:
        raise ValueError(f"spatial {h}x{w} not divisible by {s}")
    out = T.reshape(x, (c, h // s, s, w // s, s))
    out = T.transpose(out, (0, 2, 4, 1, 3))
    return T.reshape(out, (c * s * s, h // s, w // s))


def global_avg_pool(x):
    return T.mean(_wrap(x), axis=(1, 2), keepdims=True)


def nearest_upsample(x, s: int):
    x = _wrap(x)
    c, h, w = x.data.shape
    out = x.data.repeat(s, axis=1).repeat(s, axis=2)

    def bwd(g):
        return (g.reshape(c, h, s, w, s).sum(axis=(2, 4)),)

    return _make(out, (x,), bwd)


def grid_sample(img, coords, wrap: str = "circular"):
    """Differentiable bilinear sampling; forward shares the plain kernel.

    img (C, H, W), coords (2, Ho, Wo) with coords[0]=u, coords[1]=v.
    Gradients flow to both the image and the coordinates.
    """
    img, coords = _wrap(img), _wrap(coords)
    circular = wrap == "circular"
    out, aux = bilinear_kernel(img.data, coords.data[0], coords.data[1], circular)
    x0, x1, y0c, y1c, wx, wy = aux
    c = img.data.shape[0]

    def bwd(g):
        i = img.data
        gi = np.zeros_like(i)
        cidx = np.arange(c)[:, None, None]
        np.add.at(gi, (cidx, y0c[None], x0[None]), g * ((1 - wx) * (1 - wy))[None])
        np.add.at(gi, (cidx, y0c[None], x1[None]), g * (wx * (1 - wy))[None])
        np.add.at(gi, (cidx, y1c[None], x0[None]), g * ((1 - wx) * wy)[None])
        np.add.at(gi, (cidx, y1c[None], x1[None]), g * (wx * wy)[None])

        du = (1 - wy) * (i[:, y0c, x1] - i[:, y0c, x0]) + wy * (i[:, y1c, x1] - i[:, y1c, x0])
        dv = (1 - wx) * (i[:, y1c, x0] - i[:, y0c, x0]) + wx * (i[:, y1c, x1] - i[:, y0c, x1])
        gu = (g * du).sum(axis=0)
        gv = (g * dv).sum(axis=0)
        return gi, np.stack([gu, gv])

    return _make(out, (img, coords), bwd)


# ---------------------------------------------------------------------------
# reductions

def _pair_diff(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return a, b


def l1(a, b):
    """Mean absolute difference."""
    a, b = _pair_diff(a, b)
    d = a.data - b.data
    n = d.size

    def bwd(g):
        ga = g * np.sign(d) / n
        return ga, -ga

    return _make(np.abs(d).mean(), (a, b), bwd)


def l2_mse(a, b):
    """Mean squared difference."""
    a, b = _pair_diff(a, b)
    d = a.data - b.data
    n = d.size

    def bwd(g):
        ga = g * 2.0 * d / n
        return ga, -ga

    return _make((d * d).mean(), (a, b), bwd)


def smooth_l1(a, b, beta: float = 1.0):
    """Huber-style loss: quadratic below |d| = beta, linear above."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    a, b = _pair_diff(a, b)
    d = a.data - b.data
    ad = np.abs(d)
    val = np.where(ad < beta, 0.5 * ad * ad / beta, ad - 0.5 * beta).mean()
    n = d.size

    def bwd(g):
        ga = g * np.clip(d / beta, -1.0, 1.0) / n
        return ga, -ga

    return _make(val, (a, b), bwd)
