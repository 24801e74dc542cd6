import json
import os
import subprocess

import numpy as np
import pytest

import instab


def test_version_string():
    assert instab.__version__ == instab.code_version()


def test_phantom_shapes_and_range():
    for kind in ("shepp_logan", "random_ellipses", "texture"):
        img = instab.make_phantom(kind, 32, seed=3)
        assert img.shape == (1, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0
    with pytest.raises(instab.ConfigError):
        instab.make_phantom("zebra", 32)


def test_radon_adjoint_and_fbp():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (32, 32))
    s = instab.radon(x)
    y = rng.uniform(-1, 1, s.shape)
    lhs = float(np.sum(s * y))
    rhs = float(np.sum(x * instab.backproject(y, 32)[0]))
    assert abs(lhs - rhs) <= 1e-6 * abs(lhs)
    disk = instab.make_phantom("shepp_logan", 64)
    rec = instab.fbp(instab.radon(disk), 64)
    assert rec.shape == (1, 64, 64)
    assert np.mean((rec - disk) ** 2) < np.mean(disk**2)


def test_pearson_examples():
    a = np.linspace(0, 1, 50)
    assert instab.pearson(a, a) == pytest.approx(1.0)
    assert instab.pearson(a, -a) == pytest.approx(-1.0)
    assert instab.pearson(a, 3 * a + 2) == pytest.approx(1.0)
    with pytest.raises(instab.DegenerateSampleError):
        instab.pearson(np.full(10, 0.3), a[:10])
    mask = (a > 0.5).astype(float)
    assert instab.artdetect_score(np.zeros(50), mask, mask) == pytest.approx(1.0)


def test_interval_network_brackets_central():
    net = instab.Network.denoiser(32, layers=3, channels=4, seed=1)
    x = instab.make_phantom("texture", 32, seed=2)
    y = net.forward(x)
    inn = net.to_interval(2)
    c, lo, hi = inn.forward(x)
    np.testing.assert_allclose(c, y, atol=1e-12)
    assert np.all(lo <= c) and np.all(c <= hi)
    mean, heat = net.mcdrop(x, T=4, seed=5)
    assert heat.shape == y.shape and np.all(heat >= 0)


def test_config_round_trip_and_errors():
    cfg = json.loads(instab.default_config("ct"))
    assert cfg["task"] == "ct"
    resolved = json.loads(instab.validate_config(json.dumps({"task": "ct", "runs": 1})))
    assert resolved["runs"] == 1
    with pytest.raises(instab.ConfigError):
        instab.validate_config(json.dumps({"task": "ct", "bogus": 1}))


def test_tensor_file_and_render(tmp_path):
    a = np.arange(12, dtype=float).reshape(1, 3, 4) / 11
    instab.save_tensor(str(tmp_path / "a.bin"), a)
    np.testing.assert_array_equal(instab.load_tensor(str(tmp_path / "a.bin")), a)
    instab.render_heatmap(a, 0.0, 1.0, str(tmp_path / "a.pgm"))
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")


CLI = os.environ.get("INSTAB_CLI")


@pytest.mark.skipif(not CLI, reason="INSTAB_CLI not set")
def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "denoise", "nope": 1}')
    r = subprocess.run([CLI, "train", "--config", str(bad), "--out", str(tmp_path / "x")], capture_output=True)
    assert r.returncode == 2
    r = subprocess.run([CLI, "train", "--no-such-flag"], capture_output=True)
    assert r.returncode == 2
    r = subprocess.run([CLI, "score", "--task", "denoise", "--out", str(tmp_path / "none")], capture_output=True)
    assert r.returncode == 2
    assert b"instab train" in r.stderr


@pytest.mark.skipif(not CLI, reason="INSTAB_CLI not set")
def test_cli_stages_end_to_end(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({
        "task": "denoise",
        "corpus": {"image_size": 32, "count": 40},
        "train": {"epochs": 1, "patch_size": 16},
        "inn": {"train": {"epochs": 1, "patch_size": 16}},
        "probout": {"epochs": 1, "patch_size": 16},
        "mcdrop": {"T": 4},
        "attack": {"max_iterations": 5, "patch_size": 6},
        "test_samples": 2,
        "panels": 1,
    }))
    run = tmp_path / "run0"
    for cmd in ("train", "train-inn", "train-probout"):
        r = subprocess.run([CLI, cmd, "--config", str(cfg), "--out", str(run), "-q"], capture_output=True)
        assert r.returncode == 0, r.stderr
    manifest = json.loads((run / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"baseline", "inn", "probout"}
    r = subprocess.run([CLI, "score", "--config", str(cfg), "--out", str(run), "-q"], capture_output=True)
    assert r.returncode == 0, r.stderr
    summary = json.loads((run / "summary.json").read_text())
    assert "advdetect" in summary["table"] and "artdetect" in summary["table"]
    att = tmp_path / "att"
    r = subprocess.run([CLI, "attack", "--config", str(cfg), "--checkpoint", str(run / "baseline.ckpt"),
                        "--iters", "5", "--out", str(att)], capture_output=True)
    assert r.returncode == 0, r.stderr
    trace = (att / "sample0_trace.csv").read_text().splitlines()
    values = [float(line.split(",")[1]) for line in trace[1:]]
    assert all(b <= a for a, b in zip(values, values[1:]))
    x_adv = instab.load_tensor(str(att / "sample0_x_adv.bin"))
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0
    ood = tmp_path / "ood"
    r = subprocess.run([CLI, "ood", "--task", "ct", "--mode", "silhouette", "--out", str(ood)], capture_output=True)
    assert r.returncode == 0, r.stderr
    assert instab.load_tensor(str(ood / "sample0_mask.bin")).sum() > 0
    r = subprocess.run([CLI, "render", "--input", str(ood / "sample0_mask.bin"), "--out", str(tmp_path / "m.pgm")],
                       capture_output=True)
    assert r.returncode == 0 and (tmp_path / "m.pgm").exists()
