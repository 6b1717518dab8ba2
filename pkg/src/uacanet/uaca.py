"""Uncertainty augmented context attention.

The guidance saliency map splits into foreground, background and uncertain
areas; each area pools a representative feature vector; every pixel then
attends over those vectors and the result is fused back with the input.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, ConvNormAct, Module


@dataclass
class AreaMaps:
    fg: Tensor
    bg: Tensor
    uncertain: Optional[Tensor]

    def as_list(self) -> list[Tensor]:
        return [a for a in (self.fg, self.bg, self.uncertain) if a is not None]


@dataclass
class ContextVectors:
    """One ``[B, C, 1]`` vector per area, stacked as ``[B, C, K]``."""

    stacked: Tensor

    @property
    def count(self) -> int:
        return self.stacked.shape[-1]

    def vector(self, k: int) -> Tensor:
        return ad.slice_axis(self.stacked, 2, k, k + 1)


def area_maps(m: Tensor, uncertainty: bool = True) -> AreaMaps:
    """Split a saliency map in [0, 1] into disjoint fg / bg / uncertain parts.

    ``fg = max(m - 0.5, 0)``, ``bg = max(0.5 - m, 0)`` and
    ``uncertain = 0.5 - |m - 0.5|``; the three sum to 0.5 everywhere.
    """
    fg = ad.scalar_max(ad.sub(m, 0.5), 0.0)
    bg = ad.scalar_max(ad.add(ad.neg(m), 0.5), 0.0)
    unc = ad.add(ad.neg(ad.abs(ad.sub(m, 0.5))), 0.5) if uncertainty else None
    return AreaMaps(fg, bg, unc)


def context_vectors(x: Tensor, areas: AreaMaps) -> ContextVectors:
    """Area-weighted (unnormalised) sums of pixel features, as one matmul.

    ``[B, C, HW] @ [B, HW, K] -> [B, C, K]``.
    """
    maps = areas.as_list()
    B, C, H, W = x.shape
    if maps[0].shape != (B, 1, H, W):
        raise ValueError(f"area maps {maps[0].shape} do not match features {x.shape}")
    weights = ad.reshape(ad.concat_channels(maps), (B, len(maps), H * W))
    v = ad.matmul(ad.reshape(x, (B, C, H * W)), ad.permute(weights, (0, 2, 1)))
    return ContextVectors(v)


def _pointwise_vectors(conv: Conv2d, v: Tensor) -> Tensor:
    """Apply a 1x1 conv to ``[B, C, K]`` vectors."""
    B, C, K = v.shape
    out = conv(ad.reshape(v, (B, C, K, 1)))
    return ad.reshape(out, (B, out.shape[1], K))


class UACA(Module):
    """Context attention over fg / bg / uncertain area vectors plus a saliency head.

    ``forward`` returns ``(features, logit)`` where ``logit`` is the
    residual head output added to the resized guidance logit.
    """

    def __init__(self, cin: int, width: int, rng=None, uncertainty: bool = True,
                 zero_init_head: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.uncertainty = uncertainty
        embed = max(1, cin // 2)
        self.psi = Conv2d(cin, embed, 1, rng)
        self.phi = Conv2d(cin, embed, 1, rng)
        self.omega = Conv2d(cin, width, 1, rng)
        self.delta = Conv2d(width, width, 1, rng)
        self.fuse = ConvNormAct(cin + width, width, 3, rng)
        self.head = Conv2d(width, 1, 1, rng, zero_init=zero_init_head)
        self.last_areas: Optional[AreaMaps] = None
        self.last_guidance: Optional[np.ndarray] = None

    def similarity_scores(self, x: Tensor, v: ContextVectors) -> list[Tensor]:
        """Per-pixel softmax over ``psi(x_i) . phi(v_k)``; list of ``[B, 1, H, W]``."""
        B, _, H, W = x.shape
        px = ad.reshape(self.psi(x), (B, -1, H * W))
        pv = _pointwise_vectors(self.phi, v.stacked)  # B,E,K
        raw = ad.matmul(ad.permute(px, (0, 2, 1)), pv)  # B,HW,K
        raw = ad.reshape(ad.permute(raw, (0, 2, 1)), (B, v.count, H, W))
        return ad.softmax_over(ad.split_channels(raw, [1] * v.count))

    def context_aggregate(self, scores: list[Tensor], v: ContextVectors) -> Tensor:
        """``delta(sum_k s_k * omega(v_k))`` at every pixel."""
        B, _, H, W = scores[0].shape
        wv = _pointwise_vectors(self.omega, v.stacked)  # B,C',K
        s = ad.reshape(ad.concat_channels(scores), (B, len(scores), H * W))
        t = ad.reshape(ad.matmul(wv, s), (B, wv.shape[1], H, W))
        return self.delta(t)

    def forward(self, x: Tensor, guidance_logit: Tensor) -> tuple[Tensor, Tensor]:
        H, W = x.shape[-2:]
        guide = ad.bilinear_resize(guidance_logit, H, W)
        areas = area_maps(ad.sigmoid(guide), self.uncertainty)
        self.last_areas, self.last_guidance = areas, guide.data
        v = context_vectors(x, areas)
        t = self.context_aggregate(self.similarity_scores(x, v), v)
        feat = self.fuse(ad.concat_channels([t, x]))
        return feat, ad.add(self.head(feat), guide)


def save_debug_maps(m: np.ndarray, areas: AreaMaps, outdir, prefix: str = "uaca",
                    include_m: bool = True) -> list[Path]:
    """Write m, m_f, m_b, m_u of the first batch item as 8-bit PGMs (x510, clamped)."""
    from .data import write_pgm

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    maps = {"m_f": areas.fg, "m_b": areas.bg, "m_u": areas.uncertain}
    items = [("m", m)] if include_m else []
    items += [(k, t.data) for k, t in maps.items() if t is not None]
    paths = []
    for name, arr in items:
        arr = np.asarray(arr)[0, 0]
        pix = np.clip(np.rint(arr * 510.0), 0, 255).astype(np.uint8)
        path = outdir / f"{prefix}_{name}.pgm"
        write_pgm(path, pix)
        paths.append(path)
    return paths
