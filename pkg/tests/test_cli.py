import json

import numpy as np
import pytest
import torch

from splatvid import cli
from splatvid.camera import CameraModel, Intrinsics
from splatvid.config import RunConfig
from splatvid.io import CheckpointMeta, load_checkpoint, read_gsvf, save_checkpoint, write_gsvf
from splatvid.trainer import Trainer, TrainingDiverged, init_gaussians

SMALL = ["--set", "num_gaussians=60", "--set", "total_steps=30", "--set", "ode_hidden=8", "--set", "log_every=5"]


def clip(k=8, size=16):
    y, x = np.mgrid[0:size, 0:size] / size
    frames = []
    for i in range(k):
        s = i / (k - 1)
        frames.append(np.stack([0.5 + 0.3 * np.sin(3 * x + s), 0.4 + 0.3 * y, 0.3 + 0.2 * np.cos(4 * y + x)], -1))
    return np.stack(frames).astype(np.float32)


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    write_gsvf(clip(), d / "clip.gsvf")
    code = cli.main(["fit", str(d / "clip.gsvf"), "--out", str(d / "a.gsvc"), "--ci", "--seed", "3", *SMALL])
    assert code == 0
    return d


def test_fit_outputs(fitted):
    scene, camera, meta, _ = load_checkpoint(fitted / "a.gsvc")
    assert (meta.width, meta.height, meta.num_frames, meta.seed) == (16, 16, 8, 3)
    lines = (fitted / "a.gsvc.metrics.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    assert [r["step"] for r in recs] == [0, 5, 10, 15, 20, 25, 29]
    assert all(r["wall_ms"] is None for r in recs)
    assert recs[-1]["num_gaussians"] == len(scene)


def test_same_seed_identical(fitted, tmp_path):
    code = cli.main(["fit", str(fitted / "clip.gsvf"), "--out", str(tmp_path / "b.gsvc"), "--ci", "--seed", "3",
                     "--log", str(tmp_path / "b.jsonl"), *SMALL])
    assert code == 0
    assert (tmp_path / "b.jsonl").read_bytes() == (fitted / "a.gsvc.metrics.jsonl").read_bytes()
    assert (tmp_path / "b.gsvc").read_bytes() == (fitted / "a.gsvc").read_bytes()


def test_unknown_config_key(fitted, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_gaussians": 10, "learning_rat": 0.1}))
    code = cli.main(["fit", str(fitted / "clip.gsvf"), "--out", str(tmp_path / "x.gsvc"), "--config", str(cfg)])
    assert code != 0 and "learning_rat" in capsys.readouterr().err
    code = cli.main(["fit", str(fitted / "clip.gsvf"), "--out", str(tmp_path / "x.gsvc"), "--set", "bogus=1"])
    assert code != 0 and "bogus" in capsys.readouterr().err
    assert not (tmp_path / "x.gsvc").exists()


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig(num_gaussians=12, temporal_strides=(2, 1), temporal_fractions=(0.0, 0.5))
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg


def test_ci_requires_seed(fitted, tmp_path, capsys):
    code = cli.main(["fit", str(fitted / "clip.gsvf"), "--out", str(tmp_path / "x.gsvc"), "--ci", *SMALL])
    assert code == cli.EXIT_USAGE and "--seed" in capsys.readouterr().err


def test_missing_input(tmp_path):
    assert cli.main(["fit", str(tmp_path / "nope"), "--out", str(tmp_path / "x.gsvc")]) == cli.EXIT_FAIL


def test_divergence_writes_last_good(fitted, tmp_path, monkeypatch, capsys):
    def diverging_fit(frames, cfg, ci=False):
        tr = Trainer(frames, cfg, ci=ci)
        for s in range(6):
            tr.step(s)
        raise TrainingDiverged(6, "loss is nan", tr.last_good)

    monkeypatch.setattr(cli, "fit", diverging_fit)
    out = tmp_path / "d.gsvc"
    code = cli.main(["fit", str(fitted / "clip.gsvf"), "--out", str(out), "--seed", "1", *SMALL])
    assert code == cli.EXIT_DIVERGED
    assert "diverged at step 6" in capsys.readouterr().err
    assert not out.exists()
    scene, _, _, _ = load_checkpoint(tmp_path / "d.gsvc.last_good")
    assert torch.isfinite(scene.control_points).all()
    assert [json.loads(x)["step"] for x in (tmp_path / "d.gsvc.metrics.jsonl").read_text().splitlines()] == [0, 5]


def test_render_times(fitted, tmp_path, capsys):
    ck = str(fitted / "a.gsvc")
    assert cli.main(["render", ck, "--times", "0", "0.5", "1", "--out-dir", str(tmp_path / "png")]) == 0
    assert sorted(p.name for p in (tmp_path / "png").iterdir()) == [f"frame_000{i}.png" for i in range(3)]
    assert cli.main(["render", ck, "--times", "1.2", "--out-dir", str(tmp_path / "bad")]) == cli.EXIT_USAGE
    assert "[0, 1]" in capsys.readouterr().err
    assert cli.main(["render", ck, "--times", "-0.1", "--out-dir", str(tmp_path / "bad")]) == cli.EXIT_USAGE


def test_render_first_frame_matches_fit(fitted, tmp_path):
    cli.main(["render", str(fitted / "a.gsvc"), "--times", "0", "--out-dir", str(tmp_path), "--format", "gsvf"])
    img = read_gsvf(tmp_path / "frames.gsvf")[0]
    scene, camera, _, _ = load_checkpoint(fitted / "a.gsvc")
    ref = cli.render_times(scene, camera, [0.0], camera.intrinsics(0))[0]
    assert np.array_equal(img, ref.astype(np.float32))


def test_interpolate_count(fitted, tmp_path):
    assert cli.main(["interpolate", str(fitted / "a.gsvc"), "--factor", "2", "--out-dir", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("frame_*.png"))) == 15
    assert len(cli.upsampled_times(8, 3)) == 22


def test_resample_identity_is_bitwise_render(fitted, tmp_path):
    ck = str(fitted / "a.gsvc")
    cli.main(["render", ck, "--out-dir", str(tmp_path / "r"), "--format", "gsvf"])
    cli.main(["resample", ck, "--scale-x", "1", "--scale-y", "1", "--out-dir", str(tmp_path / "s"), "--format", "gsvf"])
    assert (tmp_path / "r" / "frames.gsvf").read_bytes() == (tmp_path / "s" / "frames.gsvf").read_bytes()


def test_resample_dimensions(fitted, tmp_path):
    cli.main(["resample", str(fitted / "a.gsvc"), "--scale-x", str(1 / 1.5), "--scale-y", "1.5",
              "--times", "0.5", "--out-dir", str(tmp_path), "--format", "gsvf"])
    assert read_gsvf(tmp_path / "frames.gsvf").shape == (1, 24, 11, 3)


def test_eval_against_own_renders(fitted, tmp_path, capsys):
    ck = str(fitted / "a.gsvc")
    cli.main(["render", ck, "--out-dir", str(tmp_path), "--format", "gsvf"])
    capsys.readouterr()
    assert cli.main(["eval", ck, str(tmp_path / "frames.gsvf"), "--json", str(tmp_path / "r.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((tmp_path / "r.json").read_text())
    assert report["frames"] == 8 and report["psnr"] == [100.0] * 8
    assert report["mean_psnr"] == pytest.approx(np.mean(report["psnr"]))
    assert report["mean_ssim"] == pytest.approx(np.mean(report["ssim"]))


def test_eval_against_ground_truth(fitted, capsys):
    cli.main(["eval", str(fitted / "a.gsvc"), str(fitted / "clip.gsvf")])
    report = json.loads(capsys.readouterr().out)
    assert len(report["psnr"]) == 8 and all(10 < p < 100 for p in report["psnr"])


def test_inspect_fresh_init(tmp_path, capsys):
    k = Intrinsics.default(16, 16)
    scene = init_gaussians(40, k, seed=0)
    save_checkpoint(scene, CameraModel(16, 16, hidden=8), CheckpointMeta(16, 16, 4), tmp_path / "i.gsvc")
    assert cli.main(["inspect", str(tmp_path / "i.gsvc")]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["num_gaussians"] == 40
    assert s["opacity"]["histogram"]["0.1"] == 40 and sum(s["opacity"]["histogram"].values()) == 40
    assert s["spline"]["control_polygon_length"]["static_fraction"] == 1.0
    assert len(s["camera"]["trajectory"]) == 10


def test_inspect_trained(fitted, capsys):
    assert cli.main(["inspect", str(fitted / "a.gsvc")]) == 0
    s = json.loads(capsys.readouterr().out)
    assert sum(s["opacity"]["histogram"].values()) == s["num_gaussians"]
    assert 0 <= s["opacity"]["below_0.5"] <= 1
    assert [p["t"] for p in s["camera"]["trajectory"]] == pytest.approx(np.linspace(0, 1, 10).tolist())


def test_opacity_histogram_nearest_tenth():
    h = cli.opacity_histogram(np.array([0.0, 0.04, 0.05, 0.149, 0.96, 1.0]))
    assert h["0.0"] == 2 and h["0.1"] == 2 and h["1.0"] == 2


def test_bad_checkpoint(tmp_path, capsys):
    (tmp_path / "bad.gsvc").write_bytes(b"NOPE" + bytes(200))
    assert cli.main(["inspect", str(tmp_path / "bad.gsvc")]) == cli.EXIT_FAIL
    assert "magic" in capsys.readouterr().err.lower()
