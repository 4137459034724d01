import os
import subprocess
import sys

import numpy as np
import pytest

from stereopose.cli import main, parse_args
from stereopose.synthdata import read_dataset, read_ppm

NET = ["--variant", "D4S4", "--net-size", "32", "--base-channels", "4", "--stacks", "1"]
TRAIN = ["--epochs", "1", "--batch-size", "4", "--lr", "1e-3", "--sigma", "1.5"]


def run(*argv):
    return main([str(a) for a in argv])


def cli(*argv, env=None):
    """Run the installed entry point in a fresh interpreter."""
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "stereopose.cli", *map(str, argv)],
                          capture_output=True, text=True, env=full_env)


def tree_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "ds", "--count", 6, "--sequences", 2, "--frames", 3,
               "--seed", 4) == 0
    return root / "ds"


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("model") / "net.spnc"
    assert run("train", "--data", data, "--val", data, "--out", ckpt, *NET, *TRAIN,
               "--seed", 1) == 0
    return ckpt


# -- determinism ---------------------------------------------------------------

def test_synth_is_byte_identical(data, tmp_path):
    assert run("synth", "--out", tmp_path / "again", "--count", 6, "--sequences", 2,
               "--frames", 3, "--seed", 4) == 0
    assert tree_bytes(tmp_path / "again") == tree_bytes(data)


def test_synth_seed_changes_data(data, tmp_path):
    run("synth", "--out", tmp_path / "other", "--count", 6, "--sequences", 2, "--frames", 3,
        "--seed", 5)
    assert tree_bytes(tmp_path / "other") != tree_bytes(data)


def test_train_is_byte_identical(data, model, tmp_path):
    again = tmp_path / "net.spnc"
    assert run("train", "--data", data, "--val", data, "--out", again, *NET, *TRAIN,
               "--seed", 1, "--threads", 1) == 0
    assert again.read_bytes() == model.read_bytes()
    assert (tmp_path / "net.spnc.cfg").read_text() == model.with_name("net.spnc.cfg").read_text()


def test_eval_is_byte_identical(data, model, tmp_path):
    outs = []
    for k in range(2):
        rep, rec = tmp_path / f"r{k}.txt", tmp_path / f"r{k}.csv"
        assert run("eval", "--data", data, "--checkpoint", model, "--protocol", "track",
                   "--perturb-first", "--out", rep, "--records", rec, "--seed", 3) == 0
        outs.append((rep.read_bytes(), rec.read_bytes()))
    assert outs[0] == outs[1]
    assert outs[0][1].decode().splitlines()[0].startswith("frame_id, mean_err_mm, j0_err")


def test_seed_from_environment(data, tmp_path):
    a = cli("synth", "--out", tmp_path / "a", "--count", 1, env={"STEREOPOSE_SEED": "4"})
    assert a.returncode == 0, a.stderr
    b = tmp_path / "b"
    run("synth", "--out", b, "--count", 1, "--seed", 4)
    assert tree_bytes(tmp_path / "a") == tree_bytes(b)


# -- commands ------------------------------------------------------------------

def test_eval_oracle_zero(data, capsys):
    assert run("eval", "--data", data, "--oracle") == 0
    out = capsys.readouterr().out
    assert "mean_error_mm 0.000000" in out


def test_eval_oracle_track(data, capsys):
    assert run("eval", "--data", data, "--oracle", "--protocol", "track", "--perturb-first") == 0
    out = capsys.readouterr().out
    assert "frames 6" in out and "mean_error_mm 0.000000" in out and "diverged_frames 0" in out


def test_staged_training_and_resume(data, model, tmp_path):
    log = tmp_path / "log.txt"
    out = tmp_path / "resumed.spnc"
    assert run("train", "--data", data, "--init", model, "--stage", "3d", "--out", out,
               *TRAIN, "--log", log) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "stage epoch lr train_loss val_loss"
    assert lines[1].startswith("3d 1 ")


def test_infer_prints_joint_table(data, model, capsys):
    sid = read_dataset(data)[0].sample_id
    left, right = data / f"{sid:06d}_l.ppm", data / f"{sid:06d}_r.ppm"
    assert run("infer", "--left", left, "--right", right, "--checkpoint", model,
               "--gt", data / "annotations.csv", "--id", sid) in (0, 3)
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "j,u,v,d,x,y,z" and len(lines) == 22


def test_infer_with_box(data, model, capsys):
    sid = read_dataset(data)[0].sample_id
    code = run("infer", "--left", data / f"{sid:06d}_l.ppm", "--right", data / f"{sid:06d}_r.ppm",
               "--checkpoint", model, "--box", "100,60,90,90,60")
    assert code in (0, 3)
    assert capsys.readouterr().out.startswith("j,u,v,d,x,y,z")


def test_overlay_writes_both_views(data, model, tmp_path):
    sid = read_dataset(data)[1].sample_id
    assert run("overlay", "--data", data, "--id", sid, "--checkpoint", model,
               "--out", tmp_path / "ov") == 0
    left = read_ppm(tmp_path / "ov_l.ppm")
    assert np.any(np.all(left == [1, 0, 0], axis=-1))     # ground truth in red
    assert np.any(np.all(left == [0, 1, 0], axis=-1))     # prediction in green
    assert (tmp_path / "ov_r.ppm").exists()


def test_bench_tables(capsys):
    assert run("bench", "--variants", "D4S4", "D4S8", "--repetitions", 1, "--burn-in", 0,
               "--net-size", 32, "--base-channels", 4, "--stacks", 1) == 0
    out = capsys.readouterr().out
    assert "stereo/mono" in out and "fps_mean" in out
    assert len(out.strip().splitlines()) == 3 + 5


def test_selfcheck_passes():
    res = cli("selfcheck")
    assert res.returncode == 0, res.stdout + res.stderr
    assert "7/7 checks passed" in res.stdout


def test_help_and_version():
    res = cli("--help")
    assert res.returncode == 0
    for name in ("synth", "train", "eval", "infer", "bench", "overlay", "selfcheck"):
        assert name in res.stdout
    assert cli("--version").returncode == 0
    assert cli("eval", "--help").returncode == 0


# -- errors and exit codes -----------------------------------------------------

def test_corrupt_dataset_exits_2_naming_sample(data, tmp_path, model):
    broken = tmp_path / "broken"
    broken.mkdir()
    for name, raw in tree_bytes(data).items():
        (broken / name).write_bytes(raw)
    sid = read_dataset(data)[2].sample_id
    (broken / f"{sid:06d}_l.ppm").unlink()
    res = cli("eval", "--data", broken, "--checkpoint", model)
    assert res.returncode == 2
    assert f"{sid:06d}" in res.stderr and "CorruptDataset" in res.stderr


@pytest.mark.parametrize("argv", [
    ["train"],                                     # missing required flags
    ["synth", "--out", "x", "--count", "abc"],
    ["bench", "--variants", "D3S3"],
    ["eval", "--data", "."],                       # no checkpoint, no oracle
    ["nonsense"],
])
def test_usage_errors_exit_1(argv, data):
    if argv[:1] == ["eval"]:
        argv = ["eval", "--data", str(data)]
    res = cli(*argv)
    assert res.returncode == 1, res.stderr
    assert res.stderr.startswith("error:")


def test_bad_threads_exit_1():
    assert run("selfcheck", "--threads", 0) == 1


def test_missing_checkpoint_config(data, model, tmp_path):
    lone = tmp_path / "lone.spnc"
    lone.write_bytes(model.read_bytes())
    assert run("eval", "--data", data, "--checkpoint", lone) == 1


def test_truncated_checkpoint_exit_2(data, model, tmp_path):
    bad = tmp_path / "bad.spnc"
    bad.write_bytes(model.read_bytes()[:-3])
    (tmp_path / "bad.spnc.cfg").write_text(model.with_name("net.spnc.cfg").read_text())
    assert run("eval", "--data", data, "--checkpoint", bad) == 2


# -- configuration layering ----------------------------------------------------

def test_config_file_sits_between_defaults_and_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy run\nepochs = 7\nlr = 0.002\nvariant = D2S8\n")
    args = parse_args(["train", "--data", "d", "--out", "o", "--config", str(cfg)])
    assert (args.epochs, args.lr, args.variant, args.batch_size) == (7, 0.002, "D2S8", 32)
    args = parse_args(["train", "--data", "d", "--out", "o", "--config", str(cfg), "--epochs", "3"])
    assert (args.epochs, args.lr) == (3, 0.002)


@pytest.mark.parametrize("text", ["epochs = many\n", "colour = blue\n", "variant = D9S9\n",
                                  "just words\n"])
def test_bad_config_exit_1(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run("train", "--data", "d", "--out", "o", "--config", cfg) == 1


def test_config_lists_and_flags(tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("variants = D2S4 D2S8\nverbose = true\n")
    args = parse_args(["bench", "--config", str(cfg)])
    assert args.variants == ["D2S4", "D2S8"] and args.verbose
