import numpy as np
import pytest
import torch

from splatvid.camera import CameraModel
from splatvid.gaussians import GaussianSet
from splatvid.io import (
    GSVC_VERSION,
    HEADER_FMT,
    CheckpointError,
    CheckpointMeta,
    checkpoint_size,
    frame_times,
    load_checkpoint,
    load_frames,
    read_gsvf,
    read_image,
    save_checkpoint,
    write_frame,
    write_gsvf,
)


def random_scene(g=100, n=6, sh_k=4, seed=0, model="spline"):
    gen = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.randn(*s, generator=gen)  # noqa: E731
    return GaussianSet(r(g, n, 3), r(g, 4, 3), r(g, 4, 4), r(g, sh_k, 3), r(g), position_model=model)


def random_camera(seed=0, mode="ode"):
    cam = CameraModel(40, 30, mode=mode, hidden=16, seed=seed)
    with torch.no_grad():
        for p in cam.parameters():
            p.add_(torch.randn(p.shape, generator=torch.Generator().manual_seed(seed + 1)) * 0.1)
    return cam


class TestFrames:
    def test_normalization(self, tmp_path):
        import cv2

        for i in range(2):
            cv2.imwrite(str(tmp_path / f"{i}.png"), np.full((4, 5, 3), 255, np.uint8))
        manifest, frames = load_frames(tmp_path)
        assert frames.shape == (2, 4, 5, 3) and np.all(frames == 1.0)
        assert (manifest.width, manifest.height, manifest.num_frames) == (5, 4, 2)

    def test_sixteen_bit_and_channel_order(self, tmp_path):
        import cv2

        img = np.zeros((3, 3, 3), np.uint16)
        img[..., 2] = 65535  # BGR on disk: red channel
        cv2.imwrite(str(tmp_path / "a.png"), img)
        out = read_image(tmp_path / "a.png")
        assert out[0, 0].tolist() == [1.0, 0.0, 0.0]

    def test_numeric_order(self, tmp_path):
        for i in (10, 2, 1):
            write_frame(np.full((2, 2, 3), i / 20), tmp_path / f"f{i}.png")
        manifest, frames = load_frames(tmp_path)
        assert [m.rsplit("/", 1)[1] for m in manifest.files] == ["f1.png", "f2.png", "f10.png"]

    def test_timestamps(self):
        assert frame_times(5).tolist() == [0, 0.25, 0.5, 0.75, 1]

    def test_errors(self, tmp_path):
        write_frame(np.zeros((2, 2, 3)), tmp_path / "0.png")
        with pytest.raises(ValueError):
            load_frames(tmp_path)
        write_frame(np.zeros((3, 2, 3)), tmp_path / "1.png")
        with pytest.raises(ValueError, match="mixed"):
            load_frames(tmp_path)
        (tmp_path / "2.png").write_bytes(b"junk")
        with pytest.raises(OSError):
            load_frames(tmp_path)

    def test_gsvf_roundtrip(self, tmp_path):
        frames = np.random.default_rng(0).uniform(size=(3, 5, 7, 3)).astype(np.float32)
        write_gsvf(frames, tmp_path / "v.gsvf")
        back = read_gsvf(tmp_path / "v.gsvf")
        assert back.tobytes() == frames.tobytes()
        manifest, loaded = load_frames(tmp_path / "v.gsvf")
        assert manifest.num_frames == 3 and np.array_equal(loaded, frames)

    def test_gsvf_bad(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="magic"):
            read_gsvf(tmp_path / "x")
        write_gsvf(np.zeros((2, 2, 2, 3)), tmp_path / "y")
        data = (tmp_path / "y").read_bytes()
        (tmp_path / "y").write_bytes(data[:-4])
        with pytest.raises(ValueError, match="size"):
            read_gsvf(tmp_path / "y")


class TestWriteFrame:
    def test_rounding(self, tmp_path):
        import cv2

        img = np.zeros((1, 3, 3))
        img[0, 0], img[0, 1], img[0, 2] = 1.0, 0.5, 1.5 / 255
        write_frame(img, tmp_path / "r.png")
        raw = cv2.imread(str(tmp_path / "r.png"))[..., ::-1]
        assert raw[0, :, 0].tolist() == [255, 128, 2]

    def test_quantization_bound(self, tmp_path):
        img = np.random.default_rng(1).uniform(size=(8, 9, 3))
        write_frame(img, tmp_path / "q.png")
        assert np.max(np.abs(read_image(tmp_path / "q.png") - img)) <= 1 / 255

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            write_frame(np.full((2, 2, 3), 1.5), tmp_path / "a.png")
        with pytest.raises(OSError):
            write_frame(np.zeros((2, 2, 3)), tmp_path / "missing" / "a.png")


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        scene, cam = random_scene(), random_camera()
        meta = CheckpointMeta(40, 30, 8, fps=24.0, seed=7, schedule={"total_steps": 10})
        save_checkpoint(scene, cam, meta, tmp_path / "c.gsvc")
        s2, c2, m2, fp = load_checkpoint(tmp_path / "c.gsvc")
        for name, t in scene.params().items():
            assert t.numpy().tobytes() == s2.params()[name].numpy().tobytes(), name
        assert np.array_equal(s2.knot_vector.knots, scene.knot_vector.knots)
        for (n1, p1), (n2, p2) in zip(cam.named_parameters(), c2.named_parameters()):
            assert n1 == n2 and torch.equal(p1, p2)
        assert (m2.width, m2.height, m2.num_frames, m2.fps, m2.seed) == (40, 30, 8, 24.0, 7)
        assert fp == meta.fingerprint()

    def test_polynomial_and_static_camera(self, tmp_path):
        scene, cam = random_scene(model="polynomial", g=3), random_camera(mode="static")
        save_checkpoint(scene, cam, CheckpointMeta(40, 30, 2), tmp_path / "p.gsvc")
        s2, c2, _, _ = load_checkpoint(tmp_path / "p.gsvc")
        assert s2.position_model == "polynomial" and c2.mode == "static"
        assert torch.equal(s2.positions(0.3), scene.positions(0.3))

    def test_size_formula(self, tmp_path):
        import struct

        scene, cam = random_scene(g=100), random_camera()
        save_checkpoint(scene, cam, CheckpointMeta(40, 30, 8), tmp_path / "c.gsvc")
        size = (tmp_path / "c.gsvc").stat().st_size
        header = struct.calcsize(HEADER_FMT)
        knots = 8 * (6 + 4)
        per_g = 4 * (6 * 3 + 4 * 3 + 4 * 4 + 4 * 3 + 1)
        net = 4 * (16 * 8 + 16 + 16 * 16 + 16 + 7 * 16 + 7 + 7)
        assert size == header + knots + 100 * per_g + 4 * 11 + net
        assert size == checkpoint_size(100, 6, 10, 1, 16)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.gsvc"
        save_checkpoint(random_scene(g=2), random_camera(), CheckpointMeta(40, 30, 2), p)
        data = bytearray(p.read_bytes())
        data[:4] = b"ABCD"
        p.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="ABCD"):
            load_checkpoint(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "c.gsvc"
        save_checkpoint(random_scene(g=2), random_camera(), CheckpointMeta(40, 30, 2), p)
        data = bytearray(p.read_bytes())
        data[4:8] = (GSVC_VERSION + 1).to_bytes(4, "little")
        p.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match=f"version {GSVC_VERSION + 1}.*version {GSVC_VERSION}"):
            load_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "c.gsvc"
        save_checkpoint(random_scene(g=2), random_camera(), CheckpointMeta(40, 30, 2), p)
        data = p.read_bytes()
        for cut in (10, len(data) - 1):
            p.write_bytes(data[:cut])
            with pytest.raises(CheckpointError, match="truncated"):
                load_checkpoint(p)
