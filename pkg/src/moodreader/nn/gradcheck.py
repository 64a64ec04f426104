"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class GradientCheckError(AssertionError):
    """Raised when the checked function produces non-finite values."""


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst element-wise relative error between analytic and central-difference gradients.

    ``fn`` receives one :class:`Tensor` per input array and returns a scalar
    tensor. Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    Inputs are promoted to float64.
    """
    arrays = [np.array(x, dtype=np.float64, copy=True, order="C") for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if out.data.size != 1:
        raise ValueError(f"gradient_check needs a scalar-valued function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradientCheckError("non-finite output at the base point")
    out.backward()
    worst = 0.0
    for which, (leaf, arr) in enumerate(zip(leaves, arrays)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        if not np.isfinite(analytic).all():
            bad = np.argwhere(~np.isfinite(analytic))[0]
            raise GradientCheckError(f"non-finite analytic gradient for input {which} at {tuple(bad)}")
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig - step
            minus = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                loc = np.unravel_index(i, arr.shape)
                raise GradientCheckError(f"non-finite output when perturbing input {which} at {loc}")
            numeric = (plus - minus) / (2 * step)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def module_gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Like :func:`gradient_check` but perturbs parameter tensors in place.

    ``loss_fn`` closes over a module and returns a scalar loss. With
    ``max_entries`` only that many randomly chosen entries per parameter are
    probed. Parameters should hold float64 data.
    """
    for p in params:
        p.grad = None
    out = loss_fn()
    if not np.isfinite(out.data).all():
        raise GradientCheckError("non-finite loss at the base point")
    out.backward()
    pick = np.random.default_rng(seed)
    worst = 0.0
    for which, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = np.arange(p.data.size)
        if max_entries is not None and p.data.size > max_entries:
            idx = pick.choice(p.data.size, size=max_entries, replace=False)
        for i in idx:
            loc = np.unravel_index(i, p.data.shape)
            orig = p.data[loc]
            p.data[loc] = orig + step
            plus = float(loss_fn().data)
            p.data[loc] = orig - step
            minus = float(loss_fn().data)
            p.data[loc] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise GradientCheckError(f"non-finite loss when perturbing parameter {which} at {i}")
            numeric = (plus - minus) / (2 * step)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
