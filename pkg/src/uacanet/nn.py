"""Parameter containers and the small set of layers the network uses."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class that discovers parameters and sub-modules from attributes.

    Lists and tuples of modules are traversed as well, so ``self.branches =
    [...]`` behaves like a module list. Traversal follows attribute insertion
    order, which keeps parameter names and ordering deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        unknown = sorted(set(state) - set(own))
        missing = sorted(set(own) - set(state))
        if unknown or missing:
            raise KeyError(f"state mismatch: unknown={unknown[:5]} missing={missing[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match parameter {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, dtype=ad.default_dtype())


def zeros(shape: tuple) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=ad.default_dtype())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel=1, rng=None, stride: int = 1,
                 pad=None, dilation: int = 1, bias: bool = True, zero_init: bool = False,
                 padding_mode: str = "replicate"):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if pad is None:
            pad = (dilation * (kh - 1) // 2, dilation * (kw - 1) // 2)
        self.stride, self.pad, self.dilation = stride, pad, dilation
        self.padding_mode = padding_mode
        shape = (cout, cin, kh, kw)
        self.weight = zeros(shape) if zero_init else kaiming(rng, shape, cin * kh * kw)
        self.bias = zeros((cout,)) if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.dilation,
                         self.padding_mode)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8):
        self.groups = groups if channels % groups == 0 else 1
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=ad.default_dtype())
        self.beta = zeros((channels,))

    def forward(self, x: Tensor) -> Tensor:
        return ad.group_norm(x, self.gamma, self.beta, self.groups)


class ConvNormAct(Module):
    """conv -> group norm -> (optional) relu."""

    def __init__(self, cin: int, cout: int, kernel=3, rng=None, stride: int = 1,
                 pad=None, dilation: int = 1, relu: bool = True, groups: int = 8):
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, pad=pad,
                           dilation=dilation, bias=False)
        self.norm = GroupNorm(cout, groups)
        self.relu = relu

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm(self.conv(x))
        return ad.relu(y) if self.relu else y
