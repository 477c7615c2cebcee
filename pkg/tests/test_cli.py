import subprocess
import sys

import numpy as np
import pytest

from invkit import io as rawio
from invkit.cli import main
from invkit.config import ConfigError, dumps, loads, resolve
from invkit.neuralkit import checkpoint

BENCH_CFG = """
seed = 3

[scenario]
robustness = ["kernel_jitter:0.0", "kernel_jitter:0.2"]

[[scenario.runs]]
id = "deblur"
knowledge = "known_train_test"
regime = "paired_xy"
method = "unrolled"
sigma = 0.01
operator = {kind = "convolution", kernel = "gaussian:1.0:5"}
dataset = {kind = "shapes", count = 10, h = 16, w = 16}
params = {epochs = 1, channels = 4, depth = 2, n_blocks = 2}
"""


def write(path, text):
    path.write_text(text)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def image(tmp_path, rng):
    x = rng.random((8, 8))
    path = tmp_path / "x.ivk"
    rawio.write_raw(path, x)
    return x, path


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# file formats -------------------------------------------------------------------


def test_raw_round_trip_and_layout(tmp_path, rng):
    x = rng.standard_normal((3, 5))
    path = tmp_path / "a.ivk"
    rawio.write_raw(path, x)
    blob = path.read_bytes()
    assert blob[:4] == b"IVK1"
    assert int.from_bytes(blob[4:8], "little") == 3 and int.from_bytes(blob[8:12], "little") == 5
    assert len(blob) == 12 + 8 * 15
    assert np.array_equal(rawio.read_raw(path), x)
    assert rawio.read_raw(path).tobytes() == x.tobytes()


def test_raw_rejects_bad_files(tmp_path):
    path = tmp_path / "bad.ivk"
    path.write_bytes(b"IVK1" + bytes(8) + b"x")
    with pytest.raises(rawio.RawFormatError):
        rawio.read_raw(path)
    path.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(rawio.RawFormatError):
        rawio.read_raw(path)


def test_pgm_encoding():
    x = np.array([[-1.0, 0.0, 0.5], [1.0, 2.0, 0.25]])
    blob = rawio.encode_pgm(x)
    assert blob.startswith(b"P5\n3 2\n255\n")
    assert list(blob[len(b"P5\n3 2\n255\n") :]) == [0, 0, 128, 255, 255, 64]


# config -----------------------------------------------------------------------


def test_config_defaults_and_unknown_keys():
    cfg = loads("")
    assert cfg["seed"] == 0 and cfg["solver"]["method"] == "ml_least_squares"
    assert loads(dumps(cfg)) == cfg
    for bad in ("[solver]\nmethd = 'admm'\n", "[nonsense]\n", "[solver]\nmax_iters = 'ten'\n", "seed = -1\n", "[solver\n"):
        with pytest.raises(ConfigError):
            loads(bad)
    with pytest.raises(ConfigError):
        resolve({"scenario": {"runs": [{"id": "a"}]}})
    assert loads("seed = 4\n", seed_override=9)["seed"] == 9


# simulate ------------------------------------------------------------------------


def test_simulate_identity_exact(tmp_path, image):
    x, path = image
    out = tmp_path / "sim"
    assert run("simulate", path, "--out", out) == 0
    y = rawio.read_raw(out / "measurement.ivk")
    assert y.shape == (1, 64)
    assert y.tobytes() == x.ravel().tobytes()
    resolved = loads((out / "resolved.toml").read_text())
    assert resolved["operator"]["shape"] == [8, 8]


def test_simulate_deterministic(tmp_path, image):
    _, path = image
    cfg = write(tmp_path / "c.toml", "seed = 5\n[operator]\nkind = 'convolution'\nkernel = 'gaussian:1.0:3'\nsigma = 0.1\n")
    for d in ("a", "b"):
        assert run("--config", cfg, "simulate", path, "--out", tmp_path / d) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert run("simulate", path, "--config", cfg, "--seed", "6", "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "measurement.ivk").read_bytes() != (tmp_path / "a" / "measurement.ivk").read_bytes()


def test_simulate_missing_input(tmp_path, capsys):
    assert run("simulate", tmp_path / "nope.ivk", "--out", tmp_path) == 3
    assert "cannot read" in capsys.readouterr().err


def test_invalid_config_exit_2(tmp_path, image, capsys):
    _, path = image
    cfg = write(tmp_path / "c.toml", "[operator]\nkind = 'identity'\nbogus = 1\n")
    assert run("--config", cfg, "simulate", path, "--out", tmp_path) == 2
    assert "bogus" in capsys.readouterr().err
    assert run("--config", tmp_path / "missing.toml", "simulate", path) == 3


# reconstruct -----------------------------------------------------------------------


def simulate(tmp_path, path, cfg_text):
    cfg = write(tmp_path / "sim.toml", cfg_text)
    assert run("--config", cfg, "simulate", path, "--out", tmp_path / "sim") == 0
    return tmp_path / "sim" / "measurement.ivk", tmp_path / "sim" / "resolved.toml"


def test_reconstruct_ml_identity(tmp_path, image):
    x, path = image
    meas, resolved = simulate(tmp_path, path, "")
    out = tmp_path / "rec"
    assert run("--config", resolved, "reconstruct", meas, "--truth", path, "--out", out) == 0
    xhat = rawio.read_raw(out / "reconstruction.ivk")
    assert np.max(np.abs(xhat - x)) <= 1e-12
    assert (out / "reconstruction.pgm").read_bytes().startswith(b"P5\n8 8\n255\n")
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "method,psnr_db,ssim"
    assert lines[1].startswith("ml_least_squares,")


def test_reconstruct_dip_one_iteration(tmp_path, image):
    _, path = image
    meas, resolved = simulate(tmp_path, path, "")
    cfg = write(tmp_path / "dip.toml", resolved.read_text().replace('method = "ml_least_squares"', 'method = "dip"').replace("iterations = 200", "iterations = 1"))
    assert run("--config", cfg, "reconstruct", meas, "--out", tmp_path / "dip") == 0
    assert rawio.read_raw(tmp_path / "dip" / "reconstruction.ivk").shape == (8, 8)


def test_reconstruct_learned_without_checkpoint(tmp_path, image, capsys):
    _, path = image
    meas, resolved = simulate(tmp_path, path, "")
    for method in ("csgm", "unrolled"):
        cfg = write(tmp_path / "l.toml", resolved.read_text().replace('"ml_least_squares"', f'"{method}"'))
        assert run("--config", cfg, "reconstruct", meas, "--out", tmp_path / "l") == 2
        assert "checkpoint" in capsys.readouterr().err


def test_reconstruct_divergence_exit_4(tmp_path, image, capsys):
    _, path = image
    meas, resolved = simulate(tmp_path, path, "[operator]\nkind = 'convolution'\nkernel = 'gaussian:1.0:3'\n")
    text = resolved.read_text().replace('"ml_least_squares"', '"prox_gradient"').replace("[solver]", "[solver]\nstep_size = 1e6", 1)
    cfg = write(tmp_path / "div.toml", text.replace("max_iters = 100", "max_iters = 500"))
    assert run("--config", cfg, "reconstruct", meas, "--out", tmp_path / "d") == 4
    assert "non-finite" in capsys.readouterr().err


def test_reconstruct_size_mismatch(tmp_path, image):
    _, path = image
    meas, _ = simulate(tmp_path, path, "")
    cfg = write(tmp_path / "m.toml", "[operator]\nkind = 'identity'\nshape = [4, 4]\n")
    assert run("--config", cfg, "reconstruct", meas, "--out", tmp_path / "m") == 2


def test_reconstruct_bad_inverse_spec(tmp_path, image):
    _, path = image
    meas, resolved = simulate(tmp_path, path, "")
    text = resolved.read_text().replace('"ml_least_squares"', '"approx_inverse"').replace('inverse = ""', 'inverse = "fbp"')
    assert run("--config", write(tmp_path / "i.toml", text), "reconstruct", meas, "--out", tmp_path / "i") == 2


# train -----------------------------------------------------------------------------------


def make_dataset_dir(root, n=4, with_targets=False):
    rng = np.random.default_rng(0)
    root.mkdir()
    for i in range(n):
        x = rng.random((8, 8))
        rawio.write_raw(root / f"img{i}.x.ivk", x)
        rawio.write_raw(root / f"img{i}.y.ivk", (x + 0.05 * rng.standard_normal((8, 8))).reshape(1, -1))
        if with_targets:
            rawio.write_raw(root / f"img{i}.xt.ivk", x + 0.05 * rng.standard_normal((8, 8)))
    return root


TRAIN_CFG = "[model]\nkind = '{kind}'\nchannels = 2\ndepth = 2\nn_blocks = 1\n[training]\nregime = '{regime}'\nepochs = 1\n"


def test_train_paired_one_epoch_deterministic(tmp_path):
    data = make_dataset_dir(tmp_path / "data")
    cfg = write(tmp_path / "t.toml", TRAIN_CFG.format(kind="unrolled", regime="paired_xy"))
    for d in ("a", "b"):
        assert run("--config", cfg, "train", data, "--out", tmp_path / d) == 0
    a = tmp_path / "a"
    assert (a / "model.ivkw").read_bytes() == (tmp_path / "b" / "model.ivkw").read_bytes()
    rows = (a / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss" and len(rows) == 2
    assert checkpoint.read_manifest(a / "model.ivkw")[0].startswith("# regime paired_xy")


def test_train_then_reconstruct(tmp_path):
    data = make_dataset_dir(tmp_path / "data")
    cfg = write(tmp_path / "t.toml", TRAIN_CFG.format(kind="residual", regime="paired_xy"))
    assert run("--config", cfg, "train", data, "--out", tmp_path / "m") == 0
    text = (tmp_path / "m" / "resolved.toml").read_text()
    text = text.replace('checkpoint = ""', f'checkpoint = "{tmp_path / "m" / "model.ivkw"}"').replace('"ml_least_squares"', '"residual"')
    rc = write(tmp_path / "r.toml", text)
    assert run("--config", rc, "reconstruct", data / "img0.y.ivk", "--truth", data / "img0.x.ivk", "--out", tmp_path / "r") == 0


def test_train_sure_needs_sigma(tmp_path, capsys):
    data = make_dataset_dir(tmp_path / "data")
    cfg = write(tmp_path / "t.toml", TRAIN_CFG.format(kind="residual", regime="y_only_sure"))
    assert run("--config", cfg, "train", data, "--out", tmp_path / "o") == 2
    assert "sigma" in capsys.readouterr().err
    cfg = write(tmp_path / "t2.toml", TRAIN_CFG.format(kind="residual", regime="y_only_sure") + "sigma = 0.05\n")
    assert run("--config", cfg, "train", data, "--out", tmp_path / "o2") == 0


def test_train_regime_dataset_mismatch(tmp_path):
    data = make_dataset_dir(tmp_path / "data")
    cfg = write(tmp_path / "t.toml", TRAIN_CFG.format(kind="residual", regime="noise2noise"))
    assert run("--config", cfg, "train", data, "--out", tmp_path / "o") == 2
    assert run("--config", cfg, "train", tmp_path / "nodir", "--out", tmp_path / "o") == 3


def test_train_noise2noise(tmp_path):
    data = make_dataset_dir(tmp_path / "data", with_targets=True)
    cfg = write(tmp_path / "t.toml", TRAIN_CFG.format(kind="residual", regime="noise2noise"))
    assert run("--config", cfg, "train", data, "--out", tmp_path / "o") == 0


# benchmark ---------------------------------------------------------------------------------


def test_benchmark_reproducible_and_outputs(tmp_path):
    cfg = write(tmp_path / "b.toml", BENCH_CFG)
    for d in ("a", "b"):
        assert run("--config", cfg, "benchmark", "--out", tmp_path / d) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    assert {"report.csv", "aggregate.csv", "robustness.csv", "resolved.toml"} <= set(a)
    assert any(k.startswith("panel_deblur_") and k.endswith(".pgm") for k in a)
    rob = a["robustness.csv"].decode().splitlines()
    assert rob[0] == "scenario_id,perturbation,psnr_median,psnr_drop,matched_drop"
    zero = rob[2].split(",")
    assert zero[1] == "kernel_jitter:0.0" and float(zero[3]) == 0.0


def test_benchmark_single_denoising_scenario(tmp_path):
    text = """
[[scenario.runs]]
id = "den"
knowledge = "known_train_test"
regime = "none"
method = "approx_inverse"
operator = {kind = "identity"}
sigma = 0.1
dataset = {kind = "shapes", count = 5, h = 16, w = 16}
"""
    assert run("--config", write(tmp_path / "d.toml", text), "benchmark", "--out", tmp_path / "o") == 0
    assert len((tmp_path / "o" / "aggregate.csv").read_text().splitlines()) == 2


def test_benchmark_empty_and_rejected(tmp_path, capsys):
    assert run("--config", write(tmp_path / "e.toml", "seed = 1\n"), "benchmark", "--out", tmp_path / "e") == 2
    bad = BENCH_CFG.replace('knowledge = "known_train_test"', 'knowledge = "unknown"').replace('regime = "paired_xy"', 'regime = "x_only"')
    assert run("--config", write(tmp_path / "r.toml", bad), "benchmark", "--out", tmp_path / "r") == 2
    assert "limited options" in capsys.readouterr().err
    assert (tmp_path / "r" / "report.csv").exists()  # partial results flushed


def test_console_script_and_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "invkit.cli", "simulate", str(tmp_path / "none.ivk")], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 3
    assert proc.stderr.startswith("invkit simulate:")
