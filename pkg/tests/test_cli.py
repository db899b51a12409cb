"""End-to-end command-line behavior: train, infer, eval, ablate, exit codes."""

import numpy as np
import pytest

from nlsal.cli import main
from nlsal.data import synth_dataset

TINY_BLOCKS = "1x2,1x2,1x3,1x3,1x3"


def write_config(path, **overrides):
    base = dict(
        dataset="synth",
        synth_frames=4,
        synth_size=32,
        resolution=32,
        encoder_blocks=TINY_BLOCKS,
        nl_after_block=3,
        nl_count=1,
        iterations=4,
        learning_rate=1e-4,
        momentum=0.9,
        seed=0,
    )
    base.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


@pytest.fixture
def cfg_path(tmp_path):
    return write_config(tmp_path / "run.cfg")


# ----------------------------------------------------------------- train

def test_train_static_writes_weights_and_trace(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "static.nlw").exists()
    assert (out / "config_resolved.txt").exists()
    lines = (out / "loss_static.txt").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("1\t")
    assert "weights ->" in capsys.readouterr().out


def test_train_dynamic_requires_static_weights(cfg_path, tmp_path):
    assert main(["train", "--config", str(cfg_path), "--stage", "dynamic",
                 "--out", str(tmp_path / "o")]) == 1


def test_train_both_stages(cfg_path, tmp_path):
    out = tmp_path / "both"
    assert main(["train", "--config", str(cfg_path), "--stage", "both",
                 "--out", str(out)]) == 0
    assert (out / "static.nlw").exists() and (out / "dynamic.nlw").exists()
    assert (out / "loss_dynamic.txt").exists()


def test_train_checkpoints_on_schedule(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", checkpoint_every=2)
    out = tmp_path / "ck"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "checkpoint_static_00002.nlw").exists()
    assert (out / "checkpoint_static_00004.nlw").exists()


def test_train_is_deterministic_per_seed(cfg_path, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        outs.append((out / "static.nlw").read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "c"
    assert main(["train", "--config", str(cfg_path), "--out", str(out),
                 "--seed", "1"]) == 0
    assert (out / "static.nlw").read_bytes() != outs[0]
    assert "seed = 1" in (out / "config_resolved.txt").read_text()


# ----------------------------------------------------------------- infer

def _trained(tmp_path, cfg_path, stage="static"):
    out = tmp_path / f"train_{stage}"
    code = main(["train", "--config", str(cfg_path), "--stage", stage,
                 "--out", str(out)])
    assert code == 0
    return out


def test_infer_static_writes_maps_and_metadata(cfg_path, tmp_path):
    train_out = _trained(tmp_path, cfg_path)
    data = synth_dataset(tmp_path / "data", frames=3, size=32, seed=0)
    frames_dir = str(data.sequences[0].frames[0][0]).rsplit("/", 1)[0]
    out = tmp_path / "maps"
    assert main(["infer", "--config", str(cfg_path),
                 "--weights", str(train_out / "static.nlw"),
                 "--in", frames_dir, "--out", str(out)]) == 0
    maps = sorted(p.name for p in out.iterdir() if p.suffix == ".png")
    assert len(maps) == 3
    meta = (out / "metadata.txt").read_text()
    assert "weights_sha256 = " in meta and "mean_time_s = " in meta
    assert len((out / "timing.txt").read_text().splitlines()) == 3


def test_infer_dynamic_needs_static_weights(cfg_path, tmp_path):
    both = tmp_path / "tb"
    assert main(["train", "--config", str(cfg_path), "--stage", "both",
                 "--out", str(both)]) == 0
    data = synth_dataset(tmp_path / "data", frames=3, size=32, seed=0)
    frames_dir = str(data.sequences[0].frames[0][0]).rsplit("/", 1)[0]
    out = tmp_path / "dmaps"
    assert main(["infer", "--config", str(cfg_path), "--stage", "dynamic",
                 "--weights", str(both / "dynamic.nlw"),
                 "--in", frames_dir, "--out", str(out)]) == 1
    assert main(["infer", "--config", str(cfg_path), "--stage", "dynamic",
                 "--weights", str(both / "dynamic.nlw"),
                 "--static-weights", str(both / "static.nlw"),
                 "--in", frames_dir, "--out", str(out)]) == 0
    assert len(list(out.glob("*.png"))) == 3


def test_infer_is_deterministic(cfg_path, tmp_path):
    train_out = _trained(tmp_path, cfg_path)
    data = synth_dataset(tmp_path / "data", frames=2, size=32, seed=0)
    frames_dir = str(data.sequences[0].frames[0][0]).rsplit("/", 1)[0]
    contents = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        assert main(["infer", "--config", str(cfg_path),
                     "--weights", str(train_out / "static.nlw"),
                     "--in", frames_dir, "--out", str(out)]) == 0
        contents.append([p.read_bytes() for p in sorted(out.glob("*.png"))])
    assert contents[0] == contents[1]


def test_infer_rejects_incompatible_weights(cfg_path, tmp_path, capsys):
    train_out = _trained(tmp_path, cfg_path)
    other_cfg = write_config(tmp_path / "wide.cfg", nl_count=2)
    data = synth_dataset(tmp_path / "data", frames=2, size=32, seed=0)
    frames_dir = str(data.sequences[0].frames[0][0]).rsplit("/", 1)[0]
    code = main(["infer", "--config", str(other_cfg),
                 "--weights", str(train_out / "static.nlw"),
                 "--in", frames_dir, "--out", str(tmp_path / "x")])
    assert code == 2
    assert "nl2" in capsys.readouterr().err


def test_infer_empty_frame_dir_is_a_runtime_error(cfg_path, tmp_path):
    train_out = _trained(tmp_path, cfg_path)
    empty = tmp_path / "none"
    empty.mkdir()
    assert main(["infer", "--config", str(cfg_path),
                 "--weights", str(train_out / "static.nlw"),
                 "--in", str(empty), "--out", str(tmp_path / "y")]) == 2


# ------------------------------------------------------------------ eval

def test_eval_perfect_maps_score_one(tmp_path, capsys):
    data = synth_dataset(tmp_path / "data", frames=3, size=32, seed=1)
    gt_dir = str(data.sequences[0].frames[0][1]).rsplit("/", 1)[0]
    out = tmp_path / "ev"
    assert main(["eval", "--in", gt_dir, "--gt", gt_dir,
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "maxF:  1.00000" in text and "MAE:   0.00000" in text
    assert (out / "summary.txt").exists()
    assert len((out / "pr_curve.csv").read_text().splitlines()) == 257
    assert len((out / "roc_curve.csv").read_text().splitlines()) == 257


def test_eval_is_deterministic(tmp_path):
    data = synth_dataset(tmp_path / "data", frames=3, size=32, seed=1)
    gt_dir = str(data.sequences[0].frames[0][1]).rsplit("/", 1)[0]
    csvs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert main(["eval", "--in", gt_dir, "--gt", gt_dir,
                     "--out", str(out)]) == 0
        csvs.append((out / "pr_curve.csv").read_bytes()
                    + (out / "roc_curve.csv").read_bytes())
    assert csvs[0] == csvs[1]


def test_eval_with_no_matching_stems_fails(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert main(["eval", "--in", str(a), "--gt", str(b)]) == 2


# ---------------------------------------------------------------- ablate

def test_ablate_writes_table_and_csv(tmp_path, capsys):
    cfg = write_config(tmp_path / "a.cfg", iterations=0, ablate_size=32,
                       ablate_reps=1)
    out = tmp_path / "ab"
    assert main(["ablate", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert rows[0] == "nl_after_block,nl_count,mae,mean_forward_s"
    assert len(rows) == 17  # header + baseline + 3 placements x 5 counts
    table = capsys.readouterr().out
    assert "after block 3" in table and "no non-local blocks" in table
    assert (out / "ablation.txt").exists()


# ------------------------------------------------------------ exit codes

def test_usage_errors_exit_one(tmp_path):
    assert main(["train"]) == 1                      # missing --config
    assert main(["no-such-command"]) == 1
    assert main([]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_real_key = 3\n")
    assert main(["train", "--config", str(bad)]) == 1


def test_runtime_errors_exit_two(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", dataset=str(tmp_path / "missing"))
    assert main(["train", "--config", str(cfg), "--out",
                 str(tmp_path / "o")]) == 2
