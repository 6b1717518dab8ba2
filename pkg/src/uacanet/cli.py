"""Command line entry point: ``uacanet train|eval|predict|selftest|synth``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import autodiff as ad
from .data import load_dataset, read_image, synth_blobs, write_dataset, write_pgm
from .metrics import evaluate_dataset, predict_image
from .model import ModelConfig, UACANet
from .training import (
    AdamState,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train,
)
from .uaca import save_debug_maps

logger = logging.getLogger("uacanet")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class DataConfig:
    train: str = ""
    eval: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs/default"


_SECTIONS = {"model": ModelConfig, "data": DataConfig, "train": TrainConfig}


def _coerce(cls, key: str, value):
    ftype = {f.name: f for f in dataclasses.fields(cls)}[key].default
    if isinstance(value, str) and not isinstance(ftype, str):
        if isinstance(ftype, bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise UsageError(f"{cls.__name__}.{key}: expected a boolean, got {value!r}")
            return value.lower() in ("true", "1")
        if isinstance(ftype, int):
            return int(value)
        if isinstance(ftype, float):
            return float(value)
        if isinstance(ftype, tuple):
            return tuple(int(v) for v in value.split(","))
    return value


def build_config(raw: dict, overrides: dict) -> RunConfig:
    """Merge a parsed TOML table with dotted overrides; unknown keys are rejected."""
    merged: dict = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            merged[section] = value
        else:
            merged.setdefault(section, {})[key] = value
    unknown = sorted(set(merged) - set(_SECTIONS) - {"out"})
    if unknown:
        raise UsageError(f"unknown config section(s): {unknown}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        table = merged.get(section, {})
        names = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(table) - names)
        if bad:
            raise UsageError(f"unknown key(s) in [{section}]: {bad}")
        try:
            kwargs[section] = cls(**{k: _coerce(cls, k, v) for k, v in table.items()})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"[{section}]: {exc}") from None
    return RunConfig(out=str(merged.get("out", RunConfig.out)), **kwargs)


def _split_overrides(extra: list[str]) -> dict:
    out = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"unrecognised argument {item!r} (overrides look like --train.epochs=240)")
        key, value = item[2:].split("=", 1)
        out[key] = value
    return out


def resolve_config(args, extra: list[str]) -> tuple[RunConfig, set]:
    """Config file, then dotted overrides, then dedicated flags. Also returns explicit keys."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = tomllib.loads(Path(args.config).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    overrides = _split_overrides(extra)
    flag_map = {
        "width": "model.width", "side": "model.side", "schedule": "train.schedule",
        "data": "data.train" if args.command == "train" else "data.eval", "out": "out",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_paa", False):
        overrides["model.disable_paa"] = True
    if getattr(args, "no_uncertainty", False):
        overrides["model.disable_uncertainty"] = True
    if getattr(args, "seed", None) is not None:
        overrides["model.seed"] = args.seed
        overrides["train.seed"] = args.seed
    explicit = {k for k in overrides} | {
        f"{s}.{k}" for s, t in raw.items() if isinstance(t, dict) for k in t
    }
    return build_config(raw, overrides), explicit


def _model_from_checkpoint(path: str, cfg: RunConfig, explicit: set) -> UACANet:
    """Checkpoint config echo, overridden by explicitly requested model fields, must agree."""
    try:
        saved = read_checkpoint(path).config
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from None
    fields_ = dict(saved)
    for key in explicit:
        section, _, name = key.partition(".")
        if section == "model":
            fields_[name] = getattr(cfg.model, name)
    config = ModelConfig.from_dict(fields_)
    model, _ = load_checkpoint(path, config=config)
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_train(cfg: RunConfig, resume: str | None = None) -> int:
    root = Path(cfg.data.train) if cfg.data.train else None
    if root is None or not root.is_dir():
        raise UsageError(f"training data root {cfg.data.train!r} does not exist")
    samples = load_dataset(root)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    start = 0
    state = AdamState()
    if resume:
        model, state = load_checkpoint(resume, config=cfg.model)
        start = state.step
    else:
        model = UACANet(cfg.model)
    log_path = out / "train_log.jsonl"
    t0 = time.time()
    every = cfg.train.checkpoint_every

    with open(log_path, "a") as log:
        def on_step(rec):
            log.write(json.dumps({"iter": rec["iter"], "lr": rec["lr"], "loss": rec["loss"],
                                  "per_map": rec["per_map"]}) + "\n")
            log.flush()
            if every and (rec["iter"] + 1) % every == 0:
                save_checkpoint(out / f"checkpoint_{rec['iter'] + 1:06d}.uack", model, state)
            if rec["iter"] % 50 == 0:
                logger.info("iter %d lr %.3g loss %.4f (%.0fs)", rec["iter"], rec["lr"],
                            rec["loss"], time.time() - t0)

        state = train(model, samples, cfg.train, state=state, start_iter=start, on_step=on_step)
    save_checkpoint(out / "last.uack", model, state)
    (out / "config.json").write_text(json.dumps({
        "model": cfg.model.to_dict(), "data": dataclasses.asdict(cfg.data),
        "train": dataclasses.asdict(cfg.train), "out": cfg.out}, indent=2))
    print(f"trained {state.step} iterations; checkpoint {out / 'last.uack'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str, explicit: set) -> int:
    if not checkpoint:
        raise UsageError("eval needs --checkpoint")
    root = Path(cfg.data.eval) if cfg.data.eval else None
    if root is None or not root.is_dir():
        raise UsageError(f"evaluation data root {cfg.data.eval!r} does not exist")
    model = _model_from_checkpoint(checkpoint, cfg, explicit)
    try:
        report = evaluate_dataset(model, root)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "per_image.csv")
    print(f"mDice {report.mdice:.4f}  mIoU {report.miou:.4f}  MAE {report.mae:.4f}  "
          f"({report.count} images, {len(report.skipped)} skipped)")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, checkpoint: str, images: list[str], explicit: set,
                debug_maps: bool = False) -> int:
    if not checkpoint:
        raise UsageError("predict needs --checkpoint")
    if not images:
        raise UsageError("predict needs at least one image path")
    model = _model_from_checkpoint(checkpoint, cfg, explicit)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in images:
        try:
            image = read_image(path)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read image {path}: {exc}") from None
        prob = predict_image(model, image, model.config.side)
        stem = Path(path).stem
        write_pgm(out / f"{stem}_prob.pgm", np.clip(np.rint(prob * 255.0), 0, 255).astype(np.uint8))
        if debug_maps:
            for k, (areas, stage) in enumerate(zip(model.area_maps(), model.stages), start=1):
                save_debug_maps(stage.last_guidance, areas, out, prefix=f"{stem}_stage{k}",
                                include_m=False)
        print(out / f"{stem}_prob.pgm")
    return EXIT_OK


def cmd_selftest() -> int:
    from .selftest import format_table, run_selftest

    t0 = time.time()
    results = run_selftest()
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.time() - t0:.1f}s")
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(out: str, n: int, side: int, seed: int) -> int:
    if side < 32:
        raise UsageError("synthetic side must be >= 32")
    write_dataset(synth_blobs(n, side, seed), out)
    print(f"wrote {n} samples to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uacanet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="TOML run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--width", type=int)
        sp.add_argument("--side", type=int)
        sp.add_argument("--no-paa", action="store_true")
        sp.add_argument("--no-uncertainty", action="store_true")
        sp.add_argument("--checkpoint")
        if data:
            sp.add_argument("--data", help="dataset root with images/ and masks/")

    tr = sub.add_parser("train", help="train a model")
    common(tr)
    tr.add_argument("--schedule", choices=["literal", "conventional"])
    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(ev)
    pr = sub.add_parser("predict", help="write probability maps for images")
    common(pr, data=False)
    pr.add_argument("images", nargs="*")
    pr.add_argument("--debug-maps", action="store_true",
                    help="also write each stage's fg/bg/uncertain maps")
    sub.add_parser("selftest", help="run the verification suite")
    sy = sub.add_parser("synth", help="materialise a synthetic dataset")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n", type=int, default=64)
    sy.add_argument("--side", type=int, default=64)
    sy.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = make_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "selftest":
            if extra:
                raise UsageError(f"unexpected arguments {extra}")
            return cmd_selftest()
        if args.command == "synth":
            if extra:
                raise UsageError(f"unexpected arguments {extra}")
            return cmd_synth(args.out, args.n, args.side, args.seed)
        cfg, explicit = resolve_config(args, extra)
        if args.command == "train":
            return cmd_train(cfg, resume=args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, explicit)
        return cmd_predict(cfg, args.checkpoint, args.images, explicit, args.debug_maps)
    except (UsageError, CheckpointError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
