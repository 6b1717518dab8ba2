"""Image I/O (binary PPM/PGM), dataset layout, synthetic polyps and augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from .autodiff import resize_array

logger = logging.getLogger(__name__)

IMAGE_DIR, MASK_DIR = "images", "masks"


class PNMError(ValueError):
    """Malformed or truncated PPM/PGM file."""

    def __init__(self, msg: str, offset: int, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{msg} (byte offset {offset})")
        self.offset = offset
        self.path = path


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------
def parse_pnm(buf: bytes, path=None) -> np.ndarray:
    """Decode binary P5/P6 bytes to ``[H, W]`` or ``[H, W, 3]`` float64 in [0, 1]."""
    if buf[:2] not in (b"P5", b"P6"):
        raise PNMError(f"bad magic {buf[:2]!r}, expected P5 or P6", 0, path)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError("expected a header integer", pos, path)
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PNMError("header must end with a single whitespace byte", pos, path)
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PNMError(f"invalid header values {width}x{height} maxval={maxval}", pos, path)
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = width * height * channels * dtype.itemsize
    if len(buf) - pos < need:
        raise PNMError(f"truncated pixel data: need {need} bytes, have {len(buf) - pos}",
                       len(buf), path)
    arr = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=pos)
    arr = arr.reshape(height, width, channels) if channels == 3 else arr.reshape(height, width)
    return arr.astype(np.float64) / maxval


def read_pnm(path) -> np.ndarray:
    return parse_pnm(Path(path).read_bytes(), path)


def _write_pnm(path, pixels: np.ndarray, magic: bytes) -> None:
    h, w = pixels.shape[:2]
    header = magic + f"\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write an ``[H, W]`` uint8 array as binary PGM."""
    _write_pnm(path, pixels, b"P5")


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write an ``[H, W, 3]`` uint8 array as binary PPM."""
    _write_pnm(path, pixels, b"P6")


def read_image(path) -> np.ndarray:
    """Read a PPM (or grey PGM) as ``[3, H, W]`` float32 in [0, 1]."""
    arr = read_pnm(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float32)


def read_mask(path) -> np.ndarray:
    """Read a PGM mask as ``[1, H, W]`` float32, binarised at 128 of 255."""
    arr = read_pnm(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr >= 128.0 / 255.0).astype(np.float32)[None]


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def mask_to_bytes(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask)[0] > 0.5).astype(np.uint8) * 255


# ---------------------------------------------------------------------------
# samples and dataset layout
# ---------------------------------------------------------------------------
@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] in [0, 1]
    mask: np.ndarray  # [1, H, W] in {0, 1}
    source: str = ""

    def __post_init__(self):
        if self.image.shape[-2:] != self.mask.shape[-2:]:
            raise ValueError(f"{self.source}: image {self.image.shape} and mask {self.mask.shape} differ")


@dataclass
class StemMatch:
    stems: list
    images_only: list = field(default_factory=list)
    masks_only: list = field(default_factory=list)


def match_stems(root) -> StemMatch:
    root = Path(root)
    img_dir, mask_dir = root / IMAGE_DIR, root / MASK_DIR
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain {IMAGE_DIR}/ and {MASK_DIR}/")
    images = {p.stem for p in img_dir.glob("*.ppm")}
    masks = {p.stem for p in mask_dir.glob("*.pgm")}
    match = StemMatch(sorted(images & masks), sorted(images - masks), sorted(masks - images))
    if match.images_only or match.masks_only:
        logger.warning("unmatched stems under %s: images without mask %s, masks without image %s",
                       root, match.images_only, match.masks_only)
    if not match.stems:
        raise ValueError(f"no image/mask pairs under {root}")
    return match


def iter_dataset(root) -> Iterator:
    """Yield a :class:`Sample` per pair, or the :class:`PNMError` for unreadable ones."""
    root = Path(root)
    for stem in match_stems(root).stems:
        img_path = root / IMAGE_DIR / f"{stem}.ppm"
        try:
            yield Sample(read_image(img_path), read_mask(root / MASK_DIR / f"{stem}.pgm"),
                         str(img_path))
        except (PNMError, ValueError) as exc:
            exc.path = getattr(exc, "path", None) or str(img_path)
            yield exc


def load_dataset(root) -> list[Sample]:
    """Read all pairs under ``root`` sorted by stem; unreadable pairs are skipped."""
    out = []
    for item in iter_dataset(root):
        if isinstance(item, Exception):
            logger.warning("skipping %s", item)
            continue
        out.append(item)
    return out


def write_dataset(samples, root, prefix: str = "sample") -> Path:
    root = Path(root)
    (root / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    (root / MASK_DIR).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        write_ppm(root / IMAGE_DIR / f"{prefix}_{i:04d}.ppm", image_to_bytes(s.image))
        write_pgm(root / MASK_DIR / f"{prefix}_{i:04d}.pgm", mask_to_bytes(s.mask))
    return root


# ---------------------------------------------------------------------------
# synthetic polyps
# ---------------------------------------------------------------------------
def _smooth_noise(rng: np.random.Generator, side: int, sigma: float) -> np.ndarray:
    field_ = ndimage.gaussian_filter(rng.normal(size=(side, side)), sigma, mode="wrap")
    return field_ / (np.abs(field_).max() + 1e-12)


def synth_sample(side: int, seed: int, index: int) -> Sample:
    rng = np.random.default_rng([seed, index])
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    base = np.array([0.62, 0.36, 0.30]) + rng.uniform(-0.06, 0.06, size=3)
    texture = 0.10 * _smooth_noise(rng, side, side / 16) + 0.04 * _smooth_noise(rng, side, 1.5)
    shading = 0.12 * ((xx - side / 2) / side + (yy - side / 2) / side) * rng.choice([-1, 1])
    image = base[:, None, None] + (texture + shading)[None]
    mask = np.zeros((side, side), dtype=bool)

    for _ in range(rng.integers(1, 4)):
        a, b = rng.uniform(0.08, 0.2, size=2) * side
        cy, cx = rng.uniform(0.22, 0.78, size=2) * side
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        q = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        alpha = 1.0 / (1.0 + np.exp(-(1.0 - q) * 10.0))  # soft rim
        tint = np.array([0.22, 0.08, 0.02]) + rng.uniform(-0.04, 0.04, size=3)
        dome = 0.08 * np.clip(1.0 - q, 0.0, 1.0)
        polyp = image + tint[:, None, None] + dome[None]
        image = alpha[None] * polyp + (1.0 - alpha[None]) * image
        mask |= q <= 1.0

    image = np.clip(image + rng.normal(0, 0.015, size=image.shape), 0.0, 1.0)
    return Sample(image.astype(np.float32), mask[None].astype(np.float32),
                  f"synth:{seed}:{index}")


def synth_blobs(n: int, side: int, seed: int = 0) -> list[Sample]:
    """``n`` synthetic polyp images: 1-3 soft-edged ellipses on a textured background.

    Each ellipse lies fully inside the frame, so the foreground fraction is in
    [0.01, 0.5]. Sample ``i`` depends only on ``(seed, i)``.
    """
    if side < 32:
        raise ValueError(f"side must be >= 32, got {side}")
    return [synth_sample(side, seed, i) for i in range(n)]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------
@dataclass
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    scale_range: tuple = (0.75, 1.25)
    rotation_range: tuple = (0.0, 359.0)
    morph_radius: tuple = (0, 3)
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.flip_h <= 1 and 0 <= self.flip_v <= 1):
            raise ValueError("flip probabilities must lie in [0, 1]")
        if min(self.scale_range) <= 0:
            raise ValueError(f"scale range must be positive, got {self.scale_range}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), (0.0, 0.0), (0, 0))


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx ** 2 + yy ** 2 <= r * r


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask > 0.5, structure=disk(radius)).astype(mask.dtype)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask > 0.5, structure=disk(radius),
                                  border_value=0).astype(mask.dtype)


def _center_fit(arr: np.ndarray, h: int, w: int, mode: str) -> np.ndarray:
    """Center-crop or pad the last two axes of ``arr`` to ``h x w``."""
    H, W = arr.shape[-2:]
    out = arr
    if H > h or W > w:
        top, left = max(0, (H - h) // 2), max(0, (W - w) // 2)
        out = out[..., top:top + min(h, H), left:left + min(w, W)]
    H, W = out.shape[-2:]
    if H < h or W < w:
        ph, pw = h - H, w - W
        pad = [(0, 0)] * (out.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
        out = np.pad(out, pad, mode=mode)
    return out


def flip(sample: Sample, horizontal: bool = True) -> Sample:
    axis = -1 if horizontal else -2
    return Sample(np.flip(sample.image, axis).copy(), np.flip(sample.mask, axis).copy(),
                  sample.source)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Flips, scale jitter (center crop/pad), rotation and mask dilation/erosion."""
    img, msk = sample.image, sample.mask
    H, W = img.shape[-2:]
    if rng.random() < cfg.flip_h:
        img, msk = img[..., ::-1], msk[..., ::-1]
    if rng.random() < cfg.flip_v:
        img, msk = img[..., ::-1, :], msk[..., ::-1, :]

    s = rng.uniform(*cfg.scale_range)
    if s != 1.0:
        nh, nw = max(1, int(round(H * s))), max(1, int(round(W * s)))
        img = resize_array(np.ascontiguousarray(img), nh, nw)
        rows = np.minimum(((np.arange(nh) + 0.5) * H / nh).astype(int), H - 1)
        cols = np.minimum(((np.arange(nw) + 0.5) * W / nw).astype(int), W - 1)
        msk = msk[:, rows][:, :, cols]
        img = _center_fit(img, H, W, "edge")
        msk = _center_fit(msk, H, W, "constant")

    angle = rng.uniform(*cfg.rotation_range)
    if angle != 0.0:
        img = ndimage.rotate(img, angle, axes=(2, 1), reshape=False, order=1, mode="nearest")
        msk = ndimage.rotate(msk, angle, axes=(2, 1), reshape=False, order=0,
                             mode="constant", cval=0.0)

    radius = int(rng.integers(cfg.morph_radius[0], cfg.morph_radius[1] + 1))
    grow = rng.random() < 0.5
    msk = (np.asarray(msk) > 0.5).astype(np.float32)
    if radius > 0:
        msk = np.stack([dilate(m, radius) if grow else erode(m, radius) for m in msk])

    return Sample(np.clip(np.ascontiguousarray(img), 0.0, 1.0).astype(np.float32),
                  np.ascontiguousarray(msk, dtype=np.float32), sample.source)


def sample_rng(seed: int, index: int, epoch: int = 0) -> np.random.Generator:
    """Per-sample generator so results do not depend on processing order."""
    return np.random.default_rng([seed, epoch, index])
