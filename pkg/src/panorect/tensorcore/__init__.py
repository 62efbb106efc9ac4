"""Minimal dense-tensor engine with reverse-mode differentiation.

Covers exactly the operator set the rectification network, its losses and
the differentiable warps need; nothing more. numpy holds the data, the
graph is a plain DAG of parent links, and backward walks it once in
reverse topological order with a fixed reduction order, so gradients are
bit-reproducible run to run.
"""
from .engine import (  # noqa: F401
    Tensor,
    no_grad,
    is_grad_enabled,
    tensor,
    concat,
    stack,
    where_mask,
    atan2,
    backward,
)
from . import nn, optim  # noqa: F401
from .nn import (  # noqa: F401
    Module,
    Parameter,
    Linear,
    Conv2d,
    LayerNorm,
    BatchNorm2d,
    MultiHeadAttention,
    conv2d,
    pad2d,
    linear,
    layer_norm,
    pixel_shuffle,
    pixel_unshuffle,
    global_avg_pool,
    nearest_upsample,
    grid_sample,
    l1,
    l2_mse,
    smooth_l1,
)
from .optim import Adam  # noqa: F401
from .gradcheck import gradcheck, rel_error  # noqa: F401
from .checkpoint import save_checkpoint, load_checkpoint  # noqa: F401
