"""End-to-end command-line workflow on a small phantom."""

import os

import pytest

from slicesplat.cli import main

TINY_TRAIN = [
    "--set", "warmup_iters=10", "--set", "joint_iters=5",
    "--set", "pseudo_iters=15", "--set", "pseudo_ramp_end=20",
    "--set", "init_gaussians=40", "--set", "net_width=8",
    "--set", "net_depth=2", "--set", "l_pos=2", "--set", "l_time=2",
    "--set", "densify_every=0", "--set", "checkpoint_every=0",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """phantom -> subsample -> one tiny training run, shared read-only."""
    root = tmp_path_factory.mktemp("cliws")
    vol_dir = root / "vol"
    sub_dir = root / "sub"
    assert main(["phantom", "--seed", "3", "--dims", "24", "24", "17",
                 "--n-structures", "5", "--out", str(vol_dir)]) == 0
    assert main(["subsample", "--manifest", str(vol_dir / "manifest.txt"),
                 "--factor", "4", "--out", str(sub_dir)]) == 0
    assert main(["train", "--manifest", str(sub_dir / "manifest.txt"),
                 "--seed", "1"] + TINY_TRAIN) == 0
    return root


def test_phantom_writes_stack_and_manifest(tmp_path):
    out = tmp_path / "p"
    assert main(["phantom", "--seed", "9", "--dims", "16", "16", "16",
                 "--n-structures", "3", "--out", str(out)]) == 0
    slices = sorted(out.glob("slice_*.pgm"))
    assert len(slices) == 16
    assert (out / "manifest.txt").exists()
    # deterministic across runs
    out2 = tmp_path / "q"
    assert main(["phantom", "--seed", "9", "--dims", "16", "16", "16",
                 "--n-structures", "3", "--out", str(out2)]) == 0
    assert (out / "slice_0008.pgm").read_bytes() \
        == (out2 / "slice_0008.pgm").read_bytes()


def test_phantom_rejects_small_dims(tmp_path):
    assert main(["phantom", "--dims", "8", "16", "16",
                 "--out", str(tmp_path / "x")]) == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_subsample_layout(workspace):
    sub = workspace / "sub"
    assert len(list((sub / "observed").glob("slice_*.pgm"))) == 5
    assert len(list((sub / "heldout").glob("*.pgm"))) == 12
    lines = [ln for ln in (sub / "heldout_map.txt").read_text().splitlines()
             if ln and not ln.startswith("#")]
    assert len(lines) == 12
    idx, t, fname = lines[0].split()
    assert int(idx) == 1
    assert 0.0 < float(t) < 1.0
    assert (sub / "heldout" / fname).exists()
    assert "anisotropy = 4" in (sub / "manifest.txt").read_text()


def test_subsample_rejects_misaligned_factor(workspace, tmp_path):
    manifest = workspace / "vol" / "manifest.txt"
    # 17 slices, (17-1) % 5 != 0
    assert main(["subsample", "--manifest", str(manifest),
                 "--factor", "5", "--out", str(tmp_path / "bad")]) == 1


def test_train_outputs(workspace, capsys):
    out = workspace / "sub" / "out"
    assert (out / "model.emg").exists()
    assert (out / "train_state.npz").exists()
    log = (out / "train_log.txt").read_text().splitlines()
    assert len(log) == 30
    assert log[0].split()[0] == "1"
    assert log[-1].split()[0] == "30"


def test_train_rejects_unknown_set_key(workspace):
    manifest = workspace / "sub" / "manifest.txt"
    assert main(["train", "--manifest", str(manifest),
                 "--set", "nonsense=1"]) == 2
    assert main(["train", "--manifest", str(manifest),
                 "--set", "warmup_iters=abc"]) == 2


def test_train_resume_continues(workspace):
    manifest = workspace / "sub" / "manifest.txt"
    extra = ["--set", "out_dir=out_resume"]
    assert main(["train", "--manifest", str(manifest), "--seed", "1",
                 "--stop-after", "10"] + TINY_TRAIN + extra) == 0
    out = workspace / "sub" / "out_resume"
    state = out / "train_state.npz"
    assert main(["train", "--manifest", str(manifest), "--seed", "1",
                 "--resume", str(state)] + TINY_TRAIN + extra) == 0
    log = (out / "train_log.txt").read_text().splitlines()
    assert len(log) == 30  # 10 from the first run, 20 appended on resume
    # resumed halves must agree with the uninterrupted reference run
    ref = (workspace / "sub" / "out" / "train_log.txt").read_text()
    assert log == ref.splitlines()


def test_render_single_and_range(workspace, tmp_path):
    ckpt = str(workspace / "sub" / "out" / "model.emg")
    one = tmp_path / "one"
    assert main(["render", "--checkpoint", ckpt, "--t", "0.53",
                 "--out", str(one)]) == 0
    assert len(list(one.glob("render_*.pgm"))) == 1

    grid = tmp_path / "grid"
    assert main(["render", "--checkpoint", ckpt, "--range", "0", "1",
                 "--step", "1/4", "--out", str(grid)]) == 0
    assert len(list(grid.glob("render_*.pgm"))) == 5

    aux = tmp_path / "aux.txt"
    assert main(["render", "--checkpoint", ckpt, "--t", "1/2",
                 "--out", str(tmp_path / "a"), "--dump-aux", str(aux)]) == 0
    assert aux.read_text().startswith("#")


def test_render_usage_errors(workspace, tmp_path):
    ckpt = str(workspace / "sub" / "out" / "model.emg")
    out = str(tmp_path / "r")
    assert main(["render", "--checkpoint", ckpt, "--out", out]) == 2
    assert main(["render", "--checkpoint", ckpt, "--t", "0.2",
                 "--range", "0", "1", "--step", "0.5", "--out", out]) == 2
    assert main(["render", "--checkpoint", ckpt, "--range", "0", "1",
                 "--out", out]) == 2
    assert main(["render", "--checkpoint", ckpt, "--t", "1.5",
                 "--out", out]) == 2
    assert main(["render", "--checkpoint", ckpt, "--t", "zebra",
                 "--out", out]) == 2


def test_eval_prints_reports(workspace, capsys):
    sub = workspace / "sub"
    assert main(["eval", "--checkpoint", str(sub / "out" / "model.emg"),
                 "--manifest", str(sub / "manifest.txt"),
                 "--heldout-map", str(sub / "heldout_map.txt")]) == 0
    out = capsys.readouterr().out
    for key in ("model", "nearest", "linear"):
        assert f"== {key} ==" in out
        assert f"{key}.mean.psnr = " in out
    assert out.count("model.") == 2 * 12 + 2  # per-slice + mean lines


def test_ablate_reports_gain(workspace, capsys):
    sub = workspace / "sub"
    assert main(["ablate", "--manifest", str(sub / "manifest.txt"),
                 "--heldout-map", str(sub / "heldout_map.txt"),
                 "--seed", "2"] + TINY_TRAIN) == 0
    out = capsys.readouterr().out
    assert "full: mean held-out PSNR" in out
    assert "teacher-student gain:" in out


def test_missing_checkpoint_is_runtime_error(tmp_path):
    assert main(["render", "--checkpoint", str(tmp_path / "nope.emg"),
                 "--t", "0.5", "--out", str(tmp_path / "o")]) == 1
