"""Finite-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, backward, no_grad


def rel_error(analytic, numeric, floor: float = 1.0) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor).

    The floor makes the metric absolute for small gradients and relative
    for large ones, so near-zero entries do not inflate the score.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


@dataclass
class GradcheckReport:
    max_err: float
    per_input: list


def gradcheck(fn, inputs, eps: float = 1e-6, max_entries: int | None = None,
              rng: np.random.Generator | None = None) -> GradcheckReport:
    """Compare backward() gradients of a scalar fn against central differences.

    fn maps the given Tensors to a scalar Tensor. Every input with
    requires_grad set is checked; max_entries subsamples the coordinates
    of each input (all of them when None). Inputs should be float64 for
    the stated tolerances to be meaningful.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(np.asarray(t)) for t in inputs]
    wrt = [t for t in inputs if t.requires_grad]
    if not wrt:
        raise ValueError("gradcheck needs at least one input with requires_grad")
    for t in wrt:
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]

    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=0))

    per_input = []
    for t, ag in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and max_entries < n:
            idxs = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idxs = np.arange(n)
        num = np.empty(idxs.size, dtype=np.float64)
        with no_grad():
            for j, i in enumerate(idxs):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(fn(*inputs).data)
                flat[i] = orig - eps
                f_minus = float(fn(*inputs).data)
                flat[i] = orig
                num[j] = (f_plus - f_minus) / (2.0 * eps)
        per_input.append(rel_error(ag.reshape(-1)[idxs], num))
    return GradcheckReport(max_err=max(per_input), per_input=per_input)
