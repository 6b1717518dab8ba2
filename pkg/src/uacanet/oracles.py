"""Naive per-pixel loop references for the attention arithmetic.

These deliberately avoid matrix products and reshapes so they can check the
vectorised implementations independently. They are slow; keep inputs tiny.
"""
from __future__ import annotations

import math

import numpy as np


def _pointwise(conv, vec: np.ndarray) -> np.ndarray:
    """Apply a 1x1 conv module's weights to a single channel vector."""
    w = conv.weight.data[:, :, 0, 0]
    b = conv.bias.data if conv.bias is not None else np.zeros(w.shape[0])
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        acc = float(b[o])
        for c in range(w.shape[1]):
            acc += float(w[o, c]) * float(vec[c])
        out[o] = acc
    return out


def conv2d_loop(x: np.ndarray, w: np.ndarray, b=None, stride=1, pad=0, dilation=1) -> np.ndarray:
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(Cin):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride - pad + u * dilation
                                s = j * stride - pad + v * dilation
                                if 0 <= r < H and 0 <= s < W:
                                    acc += float(x[n, c, r, s]) * float(w[o, c, u, v])
                    out[n, o, i, j] = acc
    return out


def axial_attention_loop(x: np.ndarray, attn) -> np.ndarray:
    """Reference for :class:`uacanet.attention.AxialAttention` (residual form)."""
    B, C, H, W = x.shape
    vertical = attn.axis == "vertical"
    out = np.array(x, dtype=np.float64)
    for n in range(B):
        lines = W if vertical else H
        length = H if vertical else W
        for line in range(lines):
            def pix(p):
                return x[n, :, p, line] if vertical else x[n, :, line, p]

            qs = [_pointwise(attn.query, pix(p)) for p in range(length)]
            ks = [_pointwise(attn.key, pix(p)) for p in range(length)]
            vs = [_pointwise(attn.value, pix(p)) for p in range(length)]
            for i in range(length):
                logits = [sum(float(a) * float(b) for a, b in zip(qs[i], ks[j])) for j in range(length)]
                top = max(logits)
                weights = [math.exp(lg - top) for lg in logits]
                total = sum(weights)
                attended = np.zeros(C)
                for j in range(length):
                    attended += (weights[j] / total) * vs[j]
                proj = _pointwise(attn.out_proj, attended)
                if vertical:
                    out[n, :, i, line] += proj
                else:
                    out[n, :, line, i] += proj
    return out


def area_maps_scalar(m: float) -> tuple[float, float, float]:
    return max(m - 0.5, 0.0), max(0.5 - m, 0.0), 0.5 - abs(m - 0.5)


def context_vectors_loop(x: np.ndarray, maps: list[np.ndarray]) -> np.ndarray:
    """``v[n, c, k] = sum over pixels of maps[k][n, 0, i, j] * x[n, c, i, j]``."""
    B, C, H, W = x.shape
    out = np.zeros((B, C, len(maps)))
    for n in range(B):
        for k, m in enumerate(maps):
            for c in range(C):
                acc = 0.0
                for i in range(H):
                    for j in range(W):
                        acc += float(m[n, 0, i, j]) * float(x[n, c, i, j])
                out[n, c, k] = acc
    return out


def similarity_loop(x: np.ndarray, vectors: np.ndarray, psi, phi) -> np.ndarray:
    """Per-pixel softmax over ``psi(x_i) . phi(v_k)``; returns ``[B, K, H, W]``."""
    B, C, H, W = x.shape
    K = vectors.shape[2]
    out = np.zeros((B, K, H, W))
    for n in range(B):
        pv = [_pointwise(phi, vectors[n, :, k]) for k in range(K)]
        for i in range(H):
            for j in range(W):
                px = _pointwise(psi, x[n, :, i, j])
                raw = [sum(float(a) * float(b) for a, b in zip(px, pv[k])) for k in range(K)]
                top = max(raw)
                e = [math.exp(r - top) for r in raw]
                for k in range(K):
                    out[n, k, i, j] = e[k] / sum(e)
    return out


def aggregate_loop(scores: np.ndarray, vectors: np.ndarray, omega, delta) -> np.ndarray:
    """``t_i = delta(sum_k s_k(i) * omega(v_k))``; returns ``[B, C', H, W]``."""
    B, K, H, W = scores.shape
    cout = delta.weight.shape[0]
    out = np.zeros((B, cout, H, W))
    for n in range(B):
        wv = [_pointwise(omega, vectors[n, :, k]) for k in range(K)]
        for i in range(H):
            for j in range(W):
                mix = sum(float(scores[n, k, i, j]) * wv[k] for k in range(K))
                out[n, :, i, j] = _pointwise(delta, mix)
    return out
