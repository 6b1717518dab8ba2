"""Adam, the polynomial learning-rate schedule, the training loop and checkpoints."""
from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import AugmentConfig, Sample, augment, sample_rng
from .losses import total_loss
from .model import ModelConfig, UACANet

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# schedule and optimizer
# ---------------------------------------------------------------------------
@dataclass
class PolySchedule:
    """``base_lr * (1 - (iter / iter_max) ** power)``.

    ``variant="conventional"`` switches to the usual ``(1 - iter / iter_max) ** power``.
    """

    iter_max: int
    base_lr: float = 1e-4
    power: float = 0.9
    variant: str = "literal"

    def __post_init__(self):
        if self.iter_max <= 0:
            raise ValueError(f"iter_max must be positive, got {self.iter_max}")
        if self.variant not in ("literal", "conventional"):
            raise ValueError(f"unknown schedule variant {self.variant!r}")


def poly_lr(it: int, sched: PolySchedule) -> float:
    if it > sched.iter_max:
        warnings.warn(f"iteration {it} beyond iter_max {sched.iter_max}; learning rate clamped to 0")
        return 0.0
    t = max(it, 0) / sched.iter_max
    if sched.variant == "literal":
        return sched.base_lr * (1.0 - t ** sched.power)
    return sched.base_lr * (1.0 - t) ** sched.power


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place, then clear gradients.

    ``params`` maps names to tensors whose ``.grad`` is populated.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameter(s): {missing[:5]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
        p.grad = None


class NaNLossError(FloatingPointError):
    pass


def stack_batch(samples: Sequence[Sample]) -> tuple[ad.Tensor, ad.Tensor]:
    x = np.stack([s.image for s in samples]).astype(ad.default_dtype())
    y = np.stack([s.mask for s in samples]).astype(ad.default_dtype())
    return ad.Tensor(x), ad.Tensor(y)


def train_step(model: UACANet, batch, state: AdamState, sched: PolySchedule, it: int,
               bce_reduction: str = "mean") -> tuple[float, list]:
    """One forward/backward/update. Returns ``(loss, per_map_losses)``."""
    images, masks = batch if isinstance(batch, tuple) else stack_batch(batch)
    lr = poly_lr(it, sched)
    logits = model(images)
    loss, parts = total_loss(logits, masks, bce_reduction, return_parts=True)
    value = loss.item()
    if not math.isfinite(value):
        raise NaNLossError(f"non-finite loss at iter {it} (lr={lr:g}, per-map losses={parts})")
    loss.backward()
    params = dict(model.named_parameters())
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    adam_step(params, state, lr)
    return value, parts


@dataclass
class TrainConfig:
    epochs: int = 240
    batch_size: int = 8
    lr: float = 1e-4
    schedule: str = "literal"
    seed: int = 0
    augment: bool = True
    bce_reduction: str = "mean"
    checkpoint_every: int = 0
    iters: int = 0  # overrides epochs when > 0


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def train(model: UACANet, samples: Sequence[Sample], cfg: TrainConfig,
          state: Optional[AdamState] = None, start_iter: int = 0,
          on_step: Optional[Callable[[dict], None]] = None,
          aug_cfg: Optional[AugmentConfig] = None) -> AdamState:
    """Run the training loop; samples are reshuffled each epoch from ``cfg.seed``.

    ``on_step`` receives ``{iter, lr, loss, per_map}`` after each update.
    """
    if not samples:
        raise ValueError("no training samples")
    state = state if state is not None else AdamState()
    per_epoch = batches_per_epoch(len(samples), cfg.batch_size)
    iter_max = cfg.iters if cfg.iters > 0 else cfg.epochs * per_epoch
    sched = PolySchedule(iter_max, cfg.lr, variant=cfg.schedule)
    aug_cfg = aug_cfg if aug_cfg is not None else AugmentConfig(seed=cfg.seed)
    side = model.config.side

    for it in range(start_iter, iter_max):
        epoch, k = divmod(it, per_epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(samples))
        idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
        if len(idx) == 0:
            idx = order[:cfg.batch_size]
        batch = []
        for i in idx:
            s = samples[int(i)]
            if cfg.augment:
                s = augment(s, aug_cfg, sample_rng(cfg.seed, int(i), epoch))
            if s.image.shape[-2:] != (side, side):
                s = Sample(ad.resize_array(s.image, side, side),
                           (ad.resize_array(s.mask, side, side) >= 0.5).astype(np.float32),
                           s.source)
            batch.append(s)
        loss, parts = train_step(model, stack_batch(batch), state, sched, it, cfg.bce_reduction)
        if on_step is not None:
            on_step({"iter": it, "lr": poly_lr(it, sched), "loss": loss, "per_map": parts})
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
MAGIC = b"UACK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    adam_m: dict
    adam_v: dict
    step: int
    config: dict


def save_checkpoint(path, model: UACANet, state: Optional[AdamState] = None) -> None:
    """Write parameters, Adam moments, step counter and config echo (little-endian)."""
    state = state if state is not None else AdamState()
    tensors = [(name, p.data) for name, p in model.named_parameters()]
    tensors += [(f"adam.m/{k}", v) for k, v in state.m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in state.v.items()]
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    chunks.append(struct.pack("<Q", state.step))
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg)) + cfg)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (expected {VERSION})")
    params, m, v = {}, {}, {}
    for _ in range(count):
        (n,) = r.unpack("<I", "name length")
        name = r.take(n, "name").decode("utf-8")
        code, ndim = r.unpack("<BB", f"{name} dtype")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}Q", f"{name} dims")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(nbytes, f"{name} data"), dtype=dtype).reshape(dims)
        arr = arr.astype(dtype.newbyteorder("="))
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            params[name] = arr
    (step,) = r.unpack("<Q", "step counter")
    (n,) = r.unpack("<I", "config length")
    try:
        config = json.loads(r.take(n, "config").decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: config echo is not valid JSON: {exc}") from None
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return Checkpoint(params, m, v, step, config)


def check_config(saved: dict, config: ModelConfig) -> None:
    current = config.to_dict()
    for key in sorted(set(saved) | set(current)):
        if saved.get(key) != current.get(key):
            raise CheckpointError(
                f"config mismatch on '{key}': checkpoint has {saved.get(key)!r}, "
                f"current config has {current.get(key)!r}"
            )


def load_checkpoint(path, model: Optional[UACANet] = None,
                    config: Optional[ModelConfig] = None) -> tuple[UACANet, AdamState]:
    """Restore a model and optimizer state.

    When ``model`` or ``config`` is given, the stored config echo must match.
    Nothing is modified unless the whole file validates.
    """
    ckpt = read_checkpoint(path)
    if model is not None:
        config = model.config
    if config is not None:
        check_config(ckpt.config, config)
    else:
        config = ModelConfig.from_dict(ckpt.config)
    target = UACANet(config)
    own = dict(target.named_parameters())
    unknown = sorted((set(ckpt.params) | set(ckpt.adam_m) | set(ckpt.adam_v)) - set(own))
    if unknown:
        raise CheckpointError(f"unknown tensor name(s) in checkpoint: {unknown[:5]}")
    try:
        target.load_state_dict(ckpt.params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    if model is not None:
        model.load_state_dict(ckpt.params)
        target = model
    state = AdamState(m=dict(ckpt.adam_m), v=dict(ckpt.adam_v), step=ckpt.step)
    return target, state
