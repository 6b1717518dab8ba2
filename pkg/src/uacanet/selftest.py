"""Self-verification suite: algebraic identities, loop oracles, gradient checks.

``run_selftest()`` returns one :class:`CheckResult` per check; the CLI prints
them as a table and exits non-zero when any fails.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import oracles
from .attention import PAA, AxialAttention, PAADecoder, PAAEncoder
from .autodiff import Tensor
from .losses import bce_loss, iou_loss, total_loss
from .model import ModelConfig, UACANet
from .uaca import UACA, area_maps, context_vectors

ORACLE_RTOL = 1e-5
OP_GRAD_TOL = 1e-4
MODEL_GRAD_TOL = 1e-3
# Blocks contain ReLUs after normalisation, so pre-activations near zero are
# common; a smaller step keeps the central difference from straddling a kink.
BLOCK_GRAD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(1e-12, np.max(np.abs(b))))


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def _probe(fn, seed: int = 0):
    """Wrap ``fn(x) -> Tensor`` into a scalar function with a frozen random probe."""
    cache = {}

    def f(x):
        out = fn(x)
        if "r" not in cache:
            rng = np.random.default_rng(seed)
            cache["r"] = Tensor(rng.uniform(0.5, 1.5, size=out.shape)
                                * rng.choice([-1.0, 1.0], size=out.shape), dtype=out.dtype)
        return ad.sum(ad.mul(out, cache["r"]))

    return f


# ---------------------------------------------------------------------------
# identity and partition checks
# ---------------------------------------------------------------------------
def check_area_identities(n: int = 10_000, seed: int = 0, area_fn=area_maps,
                          tol: float = 1e-6) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    m = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, 1, n)), dtype=np.float64)
    a = area_fn(m)
    fg, bg, unc = a.fg.data, a.bg.data, a.uncertain.data
    e_sum = float(np.max(np.abs(fg + bg + unc - 0.5)))
    e_disj = float(np.max(np.abs(fg * bg)))
    e_rec = float(np.max(np.abs(0.5 + fg - bg - m.data)))
    e_neg = float(-min(fg.min(), bg.min(), unc.min(), 0.0))
    ok = max(e_sum, e_disj, e_rec, e_neg) <= tol
    return ok, f"sum={e_sum:.1e} fg*bg={e_disj:.1e} recon={e_rec:.1e} neg={e_neg:.1e}"


def random_uaca(rng: np.random.Generator, cin: int = 4, width: int = 4,
                uncertainty: bool = True) -> UACA:
    with ad.precision(np.float64):
        mod = UACA(cin, width, rng, uncertainty=uncertainty)
    _randomize_biases(mod, rng)
    return mod


def _randomize_biases(mod, rng) -> None:
    for name, p in mod.named_parameters():
        if name.endswith("bias") or name.endswith("beta"):
            p.data = rng.normal(0, 0.1, size=p.shape).astype(p.dtype)


def check_score_partition(n_inputs: int = 100, seed: int = 0, tol: float = 1e-6) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_inputs):
        mod = random_uaca(rng)
        h, w = rng.integers(2, 9, size=2)
        x = Tensor(rng.normal(size=(2, 4, h, w)))
        m = Tensor(rng.uniform(size=(2, 1, h, w)))
        v = context_vectors(x, area_maps(m))
        s = mod.similarity_scores(x, v)
        worst = max(worst, float(np.max(np.abs(sum(t.data for t in s) - 1.0))))
    return worst <= tol, f"max |sum - 1| = {worst:.2e} over {n_inputs} inputs"


# ---------------------------------------------------------------------------
# oracle equivalence
# ---------------------------------------------------------------------------
def check_axial_oracle(n: int = 10, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n):
        c = 8
        h, w = rng.integers(1, 9, size=2)
        for axis in ("horizontal", "vertical"):
            with ad.precision(np.float64):
                attn = AxialAttention(c, axis, reduction=4, rng=rng)
            _randomize_biases(attn, rng)
            x = rng.normal(size=(1, c, h, w))
            got = attn(Tensor(x)).data
            worst = max(worst, rel_err(got, oracles.axial_attention_loop(x, attn)))
    return worst <= ORACLE_RTOL, f"max rel err {worst:.2e} ({n} instances x 2 axes)"


def check_uaca_oracles(n: int = 10, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    errs = {"vectors": 0.0, "scores": 0.0, "aggregate": 0.0}
    for k in range(n):
        c = int(rng.integers(2, 9))
        h, w = rng.integers(1, 9, size=2)
        mod = random_uaca(rng, cin=c, width=int(rng.integers(1, 9)))
        x = Tensor(rng.normal(size=(1, c, h, w)))
        m = Tensor(rng.uniform(size=(1, 1, h, w)))
        areas = area_maps(m)
        v = context_vectors(x, areas)
        ref_v = oracles.context_vectors_loop(x.data, [a.data for a in areas.as_list()])
        errs["vectors"] = max(errs["vectors"], rel_err(v.stacked.data, ref_v))
        s = mod.similarity_scores(x, v)
        ref_s = oracles.similarity_loop(x.data, ref_v, mod.psi, mod.phi)
        errs["scores"] = max(errs["scores"], rel_err(np.concatenate([t.data for t in s], 1), ref_s))
        t = mod.context_aggregate(s, v)
        ref_t = oracles.aggregate_loop(ref_s, ref_v, mod.omega, mod.delta)
        errs["aggregate"] = max(errs["aggregate"], rel_err(t.data, ref_t))
    ok = max(errs.values()) <= ORACLE_RTOL
    return ok, " ".join(f"{k}={v:.1e}" for k, v in errs.items())


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------
def _t(rng, *shape, lo=None):
    a = rng.normal(size=shape)
    if lo is not None:
        a = np.where(np.abs(a) < lo, np.sign(a + 1e-12) * lo + a, a)
    return Tensor(a, dtype=np.float64)


def op_gradient_cases(rng: np.random.Generator) -> list[tuple[str, Callable, Tensor]]:
    """``(name, f, x)`` triples: ``f(x)`` is a scalar built from one op."""
    other = _t(rng, 3, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), dtype=np.float64)
    w = _t(rng, 5, 3, 3, 3)
    bias = _t(rng, 5)
    img = _t(rng, 2, 3, 6, 7)
    b_mat = _t(rng, 2, 4, 3)
    gamma, beta = _t(rng, 4), _t(rng, 4)
    gn_x = _t(rng, 2, 4, 3, 3)
    cases = [
        ("add", lambda x: ad.add(x, other), _t(rng, 3, 4)),
        ("sub", lambda x: ad.sub(other, x), _t(rng, 3, 4)),
        ("mul", lambda x: ad.mul(x, other), _t(rng, 3, 4)),
        ("div", lambda x: ad.div(other, x), pos),
        ("exp", ad.exp, _t(rng, 3, 4)),
        ("log", ad.log, Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))),
        ("sigmoid", ad.sigmoid, _t(rng, 3, 4)),
        ("relu", ad.relu, _t(rng, 3, 4, lo=0.1)),
        ("abs", ad.abs, _t(rng, 3, 4, lo=0.1)),
        ("scalar_max", lambda x: ad.scalar_max(x, 0.0), _t(rng, 3, 4, lo=0.1)),
        ("clip", lambda x: ad.clip(x, -0.5, 0.5), Tensor(rng.choice([-1, 1], (3, 4)) * rng.uniform(0.1, 0.4, (3, 4)) + rng.choice([0, 1.5], (3, 4)))),
        ("sum_axis", lambda x: ad.sum(x, axis=1), _t(rng, 3, 4)),
        ("mean", lambda x: ad.mean(x, axis=(0, 2)), _t(rng, 2, 3, 4)),
        ("reshape_permute", lambda x: ad.permute(ad.reshape(x, (4, 3)), (1, 0)), _t(rng, 3, 4)),
        ("matmul_a", lambda x: ad.matmul(x, b_mat), _t(rng, 1, 5, 4)),
        ("matmul_b", lambda x: ad.matmul(b_mat, x), _t(rng, 3, 2)),
        ("softmax", lambda x: ad.softmax(x, axis=-1), _t(rng, 3, 4)),
        ("softmax_over", lambda x: ad.concat(ad.softmax_over([x, ad.mul(x, x), other]), 0), _t(rng, 3, 4)),
        ("concat_channels", lambda x: ad.concat_channels([x, ad.mul(x, 2.0)]), _t(rng, 1, 2, 3, 3)),
        ("slice", lambda x: ad.split_channels(x, [1, 2])[1], _t(rng, 1, 3, 2, 2)),
        ("conv2d_input", lambda x: ad.conv2d(x, w, bias, stride=2, pad=2, dilation=2), img),
        ("conv2d_weight", lambda x: ad.conv2d(img, x, bias, stride=1, pad=1), _t(rng, 5, 3, 3, 3)),
        ("conv2d_bias", lambda x: ad.conv2d(img, w, x, pad=1), _t(rng, 5)),
        ("conv2d_replicate", lambda x: ad.conv2d(x, w, bias, pad=(1, 2), padding_mode="replicate"), _t(rng, 1, 3, 5, 4)),
        ("group_norm_x", lambda x: ad.group_norm(x, gamma, beta, 2), _t(rng, 2, 4, 3, 3)),
        ("group_norm_gamma", lambda x: ad.group_norm(gn_x, x, beta, 2), _t(rng, 4)),
        ("bilinear_up", lambda x: ad.bilinear_resize(x, 7, 9), _t(rng, 1, 2, 3, 4)),
        ("bilinear_down", lambda x: ad.bilinear_resize(x, 2, 3), _t(rng, 1, 2, 5, 7)),
    ]
    return cases


def module_gradient_cases(rng: np.random.Generator) -> list[tuple[str, Callable, Tensor]]:
    """Block-level functions of their input, in float64."""
    with ad.precision(np.float64):
        axial = AxialAttention(8, "vertical", reduction=4, rng=rng)
        paa = PAA(8, reduction=4, rng=rng)
        enc = PAAEncoder(4, 8, rng, reduction=4)
        dec = PAADecoder(8, rng, reduction=4)
        uaca = UACA(4, 4, rng)
    for mod in (axial, paa, enc, dec, uaca):
        _randomize_biases(mod, rng)
    e3, e4 = _t(rng, 1, 8, 2, 2), _t(rng, 1, 8, 1, 1)
    guide = _t(rng, 1, 1, 2, 3)
    feats = _t(rng, 1, 4, 4, 6)
    probs = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 3, 3)))
    gt = Tensor((rng.uniform(size=(2, 1, 3, 3)) > 0.5).astype(np.float64))
    return [
        ("area_maps", lambda m: ad.concat_channels(area_maps(m).as_list()),
         Tensor(rng.uniform(0.05, 0.95, size=(1, 1, 3, 3)) + 0.0)),
        ("context_vectors", lambda x: context_vectors(x, area_maps(ad.sigmoid(guide_full(x)))).stacked, feats),
        ("similarity_scores", lambda x: ad.concat_channels(uaca.similarity_scores(x, context_vectors(x, area_maps(ad.sigmoid(guide_full(x)))))), feats),
        ("context_aggregate", lambda x: _aggregate(uaca, x), feats),
        ("uaca_features", lambda x: uaca(x, guide)[0], feats),
        ("uaca_guidance", lambda g: uaca(feats, g)[1], guide),
        ("axial_attention", axial, _t(rng, 1, 8, 3, 4)),
        ("paa", paa, _t(rng, 1, 8, 3, 3)),
        ("paa_encoder", enc, _t(rng, 1, 4, 4, 4)),
        ("paa_decoder", lambda x: dec(x, e3, e4)[1], _t(rng, 1, 8, 4, 4)),
        ("bce_loss", lambda p: bce_loss(p, gt), probs),
        ("iou_loss", lambda p: iou_loss(p, gt), probs),
    ]


def guide_full(x: Tensor) -> Tensor:
    rng = np.random.default_rng(7)
    return Tensor(rng.normal(size=(x.shape[0], 1) + x.shape[2:]), dtype=x.dtype)


def _aggregate(mod: UACA, x: Tensor) -> Tensor:
    v = context_vectors(x, area_maps(ad.sigmoid(guide_full(x))))
    return mod.context_aggregate(mod.similarity_scores(x, v), v)


def _scalar(fn, name):
    scalar_ops = {"bce_loss", "iou_loss"}
    return fn if name in scalar_ops else _probe(fn)


def check_op_gradients(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    errs = {}
    for name, fn, x in op_gradient_cases(rng):
        errs[name] = ad.grad_check(_scalar(fn, name), Tensor(x.data.astype(np.float64)))
    for name, fn, x in module_gradient_cases(rng):
        errs[name] = ad.grad_check(_scalar(fn, name), Tensor(x.data.astype(np.float64)),
                                   h=BLOCK_GRAD_STEP)
    worst = max(errs, key=errs.get)
    ok = errs[worst] < OP_GRAD_TOL
    return ok, f"{len(errs)} ops, worst {worst}={errs[worst]:.1e}"


def tiny_model(seed: int = 0, **overrides) -> UACANet:
    cfg = dict(width=8, side=32, backbone_widths=(8, 8, 8, 8), seed=seed)
    cfg.update(overrides)
    with ad.precision(np.float64):
        return UACANet(ModelConfig(**cfg))


def model_gradient_errors(seed: int = 0, n_params: int = 20, h: float = 1e-5) -> list[tuple[str, int, float]]:
    """Relative errors for ``n_params`` randomly sampled scalar parameters.

    Coordinates whose analytic gradient is zero up to roundoff (dead ReLU
    channels, or weights whose effect a normalisation cancels) carry no
    relative information; they are redrawn, after checking that their finite
    difference is at roundoff level too.
    """
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    _randomize_biases(model, rng)
    x = Tensor(rng.uniform(size=(1, 3, 32, 32)))
    gt = Tensor((rng.uniform(size=(1, 1, 32, 32)) > 0.5).astype(np.float64))

    def f(_):
        return total_loss(model(x), gt)

    model.zero_grad()
    f(x).backward()
    named = list(model.named_parameters())
    analytic = {name: p.grad.reshape(-1).copy() for name, p in named}
    sizes = np.array([p.size for _, p in named], dtype=float)
    zero_below = 1e-10 * max(float(np.abs(g).max()) for g in analytic.values())
    out = []
    while len(out) < n_params:
        k = int(rng.choice(len(named), p=sizes / sizes.sum()))
        name, p = named[k]
        i = int(rng.integers(p.size))
        if abs(analytic[name][i]) <= zero_below:
            noise = abs(ad.numeric_grad(lambda: f(x), p, i, h))
            if noise > 1e-8:
                raise AssertionError(f"{name}[{i}]: zero gradient but finite difference {noise:.1e}")
            continue
        out.append((name, i, ad.grad_check(f, x, h=h, coords=[i], wrt=p)))
    return out


def check_model_gradients(seed: int = 0) -> tuple[bool, str]:
    errs = model_gradient_errors(seed)
    name, i, worst = max(errs, key=lambda e: e[2])
    return worst < MODEL_GRAD_TOL, f"20 params, worst {name}[{i}]={worst:.1e}"


def check_checkpoint_roundtrip(seed: int = 0) -> tuple[bool, str]:
    from .training import AdamState, load_checkpoint, save_checkpoint

    model = UACANet(ModelConfig(width=8, side=32, backbone_widths=(8, 8, 8, 8), seed=seed))
    x = Tensor(np.random.default_rng(seed).uniform(size=(1, 3, 32, 32)).astype(np.float32))
    with ad.no_grad():
        before = [o.data for o in model(x)]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "rt.uack"
        save_checkpoint(path, model, AdamState(step=3))
        restored, state = load_checkpoint(path, config=model.config)
    with ad.no_grad():
        after = [o.data for o in restored(x)]
    same = all(np.array_equal(a, b) for a, b in zip(before, after)) and state.step == 3
    return same, "bit-exact" if same else "outputs differ after reload"


def run_selftest(include_model_grad: bool = True) -> list[CheckResult]:
    checks = [
        ("area-map identities", check_area_identities),
        ("score partition", check_score_partition),
        ("axial attention oracle", check_axial_oracle),
        ("uaca oracles", check_uaca_oracles),
        ("op gradients", check_op_gradients),
        ("checkpoint round-trip", check_checkpoint_roundtrip),
    ]
    if include_model_grad:
        checks.insert(5, ("model gradients", check_model_gradients))
    return [_timed(name, fn) for name, fn in checks]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.1f}s  {r.detail}")
    return "\n".join(lines)
