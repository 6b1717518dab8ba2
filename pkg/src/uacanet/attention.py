"""Parallel axial attention and the encoder/decoder blocks built on it."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, ConvNormAct, Module

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class AxialAttention(Module):
    """Non-local attention restricted to one spatial axis.

    For ``axis="horizontal"`` every row attends over its own W positions; the
    vertical case attends within each column. No positional encoding. The
    result is ``x + out_proj(attended_values)``.
    """

    def __init__(self, channels: int, axis: str = HORIZONTAL, reduction: int = 8, rng=None):
        if axis not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"axis must be {HORIZONTAL!r} or {VERTICAL!r}, got {axis!r}")
        if channels % reduction:
            raise ValueError(f"channels ({channels}) must be divisible by reduction ({reduction})")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.axis = axis
        inner = channels // reduction
        self.query = Conv2d(channels, inner, 1, rng)
        # a key bias only shifts each softmax row by a constant, so it would
        # never receive gradient
        self.key = Conv2d(channels, inner, 1, rng, bias=False)
        self.value = Conv2d(channels, channels, 1, rng)
        self.out_proj = Conv2d(channels, channels, 1, rng)

    def attend(self, x: Tensor) -> Tensor:
        """Attended values (before output projection and residual)."""
        if self.axis == VERTICAL:
            x = ad.permute(x, (0, 1, 3, 2))
        q = ad.permute(self.query(x), (0, 2, 3, 1))  # B,H,W,Cr
        k = ad.permute(self.key(x), (0, 2, 1, 3))  # B,H,Cr,W
        v = ad.permute(self.value(x), (0, 2, 3, 1))  # B,H,W,C
        affinity = ad.softmax(ad.matmul(q, k), axis=-1)  # B,H,W,W
        out = ad.permute(ad.matmul(affinity, v), (0, 3, 1, 2))
        if self.axis == VERTICAL:
            out = ad.permute(out, (0, 1, 3, 2))
        return out

    def affinity(self, x: Tensor) -> np.ndarray:
        """Row-normalised affinities, ``[B, lines, L, L]``, for inspection."""
        if self.axis == VERTICAL:
            x = ad.permute(x, (0, 1, 3, 2))
        q = ad.permute(self.query(x), (0, 2, 3, 1))
        k = ad.permute(self.key(x), (0, 2, 1, 3))
        return ad.softmax(ad.matmul(q, k), axis=-1).data

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.value.weight.shape[1]:
            raise ValueError(f"expected {self.value.weight.shape[1]} channels, got input {x.shape}")
        return ad.add(x, self.out_proj(self.attend(x)))


class PAA(Module):
    """Horizontal and vertical axial attention evaluated in parallel and summed."""

    def __init__(self, channels: int, reduction: int = 8, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.horizontal = AxialAttention(channels, HORIZONTAL, reduction, rng)
        self.vertical = AxialAttention(channels, VERTICAL, reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(self.horizontal(x), self.vertical(x))


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class PAAEncoder(Module):
    """Receptive-field style multi-branch encoder with a PAA block per branch.

    Branch 0 is a point-wise conv. Branches 1..3 apply a point-wise conv, a
    1xk / kx1 pair and a 3x3 conv with dilation k, for k in ``kernels``.
    Branch outputs are concatenated, fused by a 3x3 conv and added to a
    point-wise projection of the input.
    """

    def __init__(self, cin: int, width: int, rng=None, use_paa: bool = True,
                 kernels=(3, 5, 7), reduction: int = 8):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin = cin
        self.branches = [[ConvNormAct(cin, width, 1, rng)]]
        for k in kernels:
            self.branches.append([
                ConvNormAct(cin, width, 1, rng),
                ConvNormAct(width, width, (1, k), rng),
                ConvNormAct(width, width, (k, 1), rng),
                ConvNormAct(width, width, 3, rng, dilation=k),
            ])
        self.branches = [Sequential(b) for b in self.branches]
        self.attn = [PAA(width, reduction, rng) if use_paa else Identity() for _ in self.branches]
        self.fuse = ConvNormAct(width * len(self.branches), width, 3, rng, relu=False)
        self.residual = ConvNormAct(cin, width, 1, rng, relu=False)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ValueError(f"PAAEncoder expects {self.cin} input channels, got {x.shape}")
        outs = [attn(branch(x)) for branch, attn in zip(self.branches, self.attn)]
        fused = self.fuse(ad.concat_channels(outs))
        return ad.relu(ad.add(fused, self.residual(x)))


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class PAADecoder(Module):
    """Fuse three encoder outputs, refine with PAA, emit a 1-channel logit map."""

    def __init__(self, width: int, rng=None, use_paa: bool = True, reduction: int = 8):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fuse = Sequential([
            ConvNormAct(3 * width, width, 3, rng),
            ConvNormAct(width, width, 3, rng),
        ])
        self.attn = PAA(width, reduction, rng) if use_paa else Identity()
        self.head = Conv2d(width, 1, 1, rng)

    def forward(self, e2: Tensor, e3: Tensor, e4: Tensor) -> tuple[Tensor, Tensor]:
        h, w = e2.shape[-2:]
        for e, f in ((e3, 2), (e4, 4)):
            if e.shape[-2] * f != h or e.shape[-1] * f != w:
                raise ValueError(
                    f"decoder inputs must be 1x, 1/2x, 1/4x scale: got {e2.shape}, {e3.shape}, {e4.shape}"
                )
        e3u = ad.bilinear_resize(e3, h, w)
        e4u = ad.bilinear_resize(e4, h, w)
        feat = self.attn(self.fuse(ad.concat_channels([e2, e3u, e4u])))
        return feat, self.head(feat)
