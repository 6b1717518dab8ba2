"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np


def _as_list(X, name: str) -> list:
    if isinstance(X, np.ndarray):
        if X.ndim < 3:
            raise ValueError(f"{name} must be a batch of images, got an array of shape {X.shape}")
        return list(X)
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be an array or a sequence of arrays") from None
    if not items:
        raise ValueError(f"{name} is empty")
    return items


def check_image(img) -> np.ndarray:
    """One ``[H, W, 3]`` (or ``[H, W]``) image, uint8 or float in [0, 1] -> ``[3, H, W]`` float32."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {a.shape}")
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / 255.0
    else:
        a = a.astype(np.float32)
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains NaN or Inf")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError(f"float images must lie in [0, 1], got [{a.min():g}, {a.max():g}]")
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def check_images(X) -> list[np.ndarray]:
    return [check_image(x) for x in _as_list(X, "X")]


def check_masks(y, images: list[np.ndarray]) -> list[np.ndarray]:
    """Binary ``[H, W]`` masks matching ``images`` -> ``[1, H, W]`` float32 in {0, 1}."""
    masks = _as_list(y, "y")
    if len(masks) != len(images):
        raise ValueError(f"got {len(images)} images but {len(masks)} masks")
    out = []
    for i, (m, img) in enumerate(zip(masks, images)):
        m = np.asarray(m)
        if m.ndim == 3 and m.shape[-1] == 1:
            m = m[..., 0]
        if m.shape != img.shape[1:]:
            raise ValueError(f"mask {i} has shape {m.shape}, image has {img.shape[1:]}")
        values = np.unique(m)
        if not np.all(np.isin(values, (0, 1, 255))):
            raise ValueError(f"mask {i} is not binary: values {values[:6]}")
        out.append((m > 0).astype(np.float32)[None])
    return out


def check_side(side: int) -> int:
    side = int(side)
    if side < 32 or side % 32:
        raise ValueError(f"side must be a positive multiple of 32, got {side}")
    return side
