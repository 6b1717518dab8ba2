"""Central-difference gradient verification."""
from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, index, h: float) -> float:
    flat = x.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = f().data.item()
    flat[index] = orig - h
    fm = f().data.item()
    flat[index] = orig
    return (fp - fm) / (2.0 * h)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    coords: Optional[Iterable[int]] = None,
    wrt: Optional[Tensor] = None,
) -> float:
    """Largest relative error between backprop and central differences.

    ``f(x)`` must return a scalar tensor. By default the check perturbs ``x``;
    pass ``wrt`` to perturb a different tensor that ``f`` closes over (a model
    parameter, say). ``coords`` restricts the check to some flat indices.
    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    target = x if wrt is None else wrt
    if target.dtype != np.float64:
        raise TypeError(f"grad_check needs float64 data, got {target.dtype}")
    target.requires_grad = True
    target.grad = None
    out = f(x)
    if out.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    out.backward()
    analytic = np.zeros(target.size) if target.grad is None else target.grad.reshape(-1).copy()

    idx = range(target.size) if coords is None else list(coords)
    worst = 0.0
    for i in idx:
        n = numeric_grad(lambda: f(x), target, i, h)
        a = analytic[i]
        err = abs(a - n) / max(1e-8, abs(a) + abs(n))
        worst = max(worst, err)
    return worst
