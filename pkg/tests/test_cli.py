import json

import numpy as np
import pytest

from uacanet.cli import UsageError, build_config, main
from uacanet.data import read_pnm, synth_blobs, write_dataset, write_ppm

TINY_TOML = """
out = "{out}"
[model]
width = 8
side = 32
backbone_widths = [8, 8, 8, 8]
[train]
iters = 4
batch_size = 2
lr = 1e-3
checkpoint_every = 2
augment = false
"""


@pytest.fixture
def workspace(tmp_path):
    write_dataset(synth_blobs(4, 32, seed=0), tmp_path / "train")
    write_dataset(synth_blobs(2, 32, seed=1), tmp_path / "test")
    cfg = tmp_path / "run.toml"
    cfg.write_text(TINY_TOML.format(out=tmp_path / "run"))
    return tmp_path


def _train(ws, *extra):
    return main(["train", "--config", str(ws / "run.toml"), "--data", str(ws / "train"), *extra])


def test_train_writes_checkpoints_and_log(workspace):
    assert _train(workspace) == 0
    run = workspace / "run"
    assert (run / "last.uack").exists() and (run / "checkpoint_000002.uack").exists()
    lines = [json.loads(x) for x in (run / "train_log.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in lines] == [0, 1, 2, 3]
    assert set(lines[0]) == {"iter", "lr", "loss", "per_map"} and len(lines[0]["per_map"]) == 4


def test_resume_continues_iteration_numbering(workspace):
    assert _train(workspace, "--train.iters=2") == 0
    assert _train(workspace, "--checkpoint", str(workspace / "run" / "last.uack")) == 0
    lines = (workspace / "run" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["iter"] for x in lines] == [0, 1, 2, 3]


def test_missing_data_root_exits_2(workspace):
    assert main(["train", "--config", str(workspace / "run.toml"),
                 "--data", str(workspace / "nowhere")]) == 2


def test_unknown_override_exits_2(workspace, capsys):
    assert _train(workspace, "--train.bogus=1") == 2
    assert "bogus" in capsys.readouterr().err


def test_eval_report_and_csv_consistent(workspace, capsys):
    assert _train(workspace) == 0
    out = workspace / "ev"
    code = main(["eval", "--checkpoint", str(workspace / "run" / "last.uack"),
                 "--data", str(workspace / "test"), "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "mDice" in printed and "mIoU" in printed and "MAE" in printed
    report = json.loads((out / "report.json").read_text())
    rows = (out / "per_image.csv").read_text().splitlines()[1:]
    dice = [float(r.split(",")[1]) for r in rows]
    assert report["count"] == 2 and report["mDice"] == pytest.approx(np.mean(dice), abs=1e-15)


def test_eval_config_mismatch_exits_nonzero(workspace):
    assert _train(workspace) == 0
    code = main(["eval", "--checkpoint", str(workspace / "run" / "last.uack"),
                 "--data", str(workspace / "test"), "--width", "16"])
    assert code != 0


def test_eval_empty_dataset_exits_2(workspace):
    assert _train(workspace) == 0
    empty = workspace / "empty"
    (empty / "images").mkdir(parents=True)
    (empty / "masks").mkdir()
    assert main(["eval", "--checkpoint", str(workspace / "run" / "last.uack"),
                 "--data", str(empty)]) == 2


def test_predict_writes_original_size_and_debug_maps(workspace):
    assert _train(workspace) == 0
    img = workspace / "odd.ppm"
    write_ppm(img, np.random.default_rng(0).integers(0, 256, size=(27, 41, 3), dtype=np.uint8))
    out = workspace / "pred"
    code = main(["predict", "--checkpoint", str(workspace / "run" / "last.uack"), str(img),
                 "--out", str(out), "--debug-maps"])
    assert code == 0
    prob = read_pnm(out / "odd_prob.pgm")
    assert prob.shape == (27, 41) and 0 <= prob.min() and prob.max() <= 1
    assert len(list(out.glob("odd_stage*_m_*.pgm"))) == 9


def test_predict_unreadable_image_exits_nonzero(workspace):
    assert _train(workspace) == 0
    bad = workspace / "bad.ppm"
    bad.write_bytes(b"garbage")
    assert main(["predict", "--checkpoint", str(workspace / "run" / "last.uack"), str(bad)]) != 0


def test_synth_subcommand(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n", "3", "--side", "32"]) == 0
    assert len(list((tmp_path / "s" / "images").glob("*.ppm"))) == 3


def test_build_config_merges_and_rejects():
    cfg = build_config({"model": {"width": 16}}, {"train.epochs": "12", "model.disable_paa": "true"})
    assert cfg.model.width == 16 and cfg.train.epochs == 12 and cfg.model.disable_paa is True
    with pytest.raises(UsageError):
        build_config({"mdoel": {}}, {})
    with pytest.raises(UsageError):
        build_config({}, {"model.disable_paa": "maybe"})


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
