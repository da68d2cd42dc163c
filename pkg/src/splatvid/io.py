"""Frame ingestion, frame output and the GSVC checkpoint format.

GSVF raw frames (little-endian)::

    magic  b"GSVF"
    u32    width, height, count
    f32    count x 3 x height x width   (planar RGB per frame)

GSVC checkpoint (little-endian)::

    header  struct HEADER_FMT (see below)
    f64     knots                      (num_knots values; 0 for polynomial positions)
    f32     control_points             G x N x 3
    f32     scale_coeffs               G x 4 x 3
    f32     rotation_coeffs            G x 4 x 4
    f32     sh                         G x K x 3
    f32     raw_opacity                G
    f32     log_focal (2), principal (2), z0 (7)
    f32     ODE network tensors in CAMERA_NET_ORDER
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .camera import CAMERA_MODES, CameraModel
from .gaussians import GaussianSet, num_sh_coeffs
from .spline import KnotVector

GSVF_MAGIC = b"GSVF"
GSVC_MAGIC = b"GSVC"
GSVC_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp", ".ppm", ".exr")
POSITION_MODELS = ("spline", "polynomial")

# magic, version, G, degree, N, num_knots, sh_degree, position model, camera mode,
# hidden, ode steps, width, height, frames, fps, seed, schedule fingerprint
HEADER_FMT = "<4sIIIIIIBB2xIIIIIfQ32s"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
CAMERA_NET_ORDER = ("l1.weight", "l1.bias", "l2.weight", "l2.bias", "l3.weight", "l3.bias", "gain")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class VideoManifest:
    files: tuple[str, ...]
    fps: float
    width: int
    height: int

    @property
    def num_frames(self) -> int:
        return len(self.files)

    @property
    def timestamps(self) -> np.ndarray:
        return frame_times(self.num_frames)


def frame_times(k: int) -> np.ndarray:
    if k < 2:
        raise ValueError(f"need at least 2 frames, got {k}")
    return np.arange(k) / (k - 1)


def _natural_key(name: str):
    return [int(s) if s.isdigit() else s for s in re.split(r"(\d+)", name)]


def read_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{path}: expected a 3-channel image, got shape {img.shape}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"{path}: unsupported sample type {img.dtype}")
    return (img[..., ::-1].astype(np.float32) / np.float32(scale))


def write_frame(image, path) -> None:
    """Write an RGB float image in [0, 1] as 8 bits, rounding half to even."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {img.shape}")
    if img.min() < -1e-6 or img.max() > 1 + 1e-6:
        raise ValueError(f"image values outside [0, 1]: [{img.min()}, {img.max()}]")
    q = np.rint(np.clip(img, 0, 1) * 255.0).astype(np.uint8)
    try:
        ok = cv2.imwrite(str(path), np.ascontiguousarray(q[..., ::-1]))
    except cv2.error as e:
        raise OSError(f"cannot write {path}: {e}") from e
    if not ok:
        raise OSError(f"cannot write {path}")


def write_gsvf(frames, path) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"expected (K, H, W, 3), got {frames.shape}")
    k, h, w, _ = frames.shape
    with open(path, "wb") as f:
        f.write(GSVF_MAGIC + struct.pack("<III", w, h, k))
        f.write(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)).tobytes())


def read_gsvf(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != GSVF_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {GSVF_MAGIC!r}")
    if len(data) < 16:
        raise ValueError(f"{path}: truncated header")
    w, h, k = struct.unpack_from("<III", data, 4)
    expected = 16 + 4 * k * 3 * h * w
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match {k} frames of {w}x{h} ({expected} bytes)")
    planar = np.frombuffer(data, dtype="<f4", offset=16).reshape(k, 3, h, w)
    return planar.transpose(0, 2, 3, 1).astype(np.float32)


def load_frames(path, fps: float = 30.0) -> tuple[VideoManifest, np.ndarray]:
    """Frames as float32 (K, H, W, 3) in [0, 1] from a directory or GSVF file."""
    path = Path(path)
    if path.is_dir():
        files = sorted((p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
                       key=lambda p: _natural_key(p.name))
        if len(files) < 2:
            raise ValueError(f"{path}: need at least 2 frames, found {len(files)}")
        frames = [read_image(p) for p in files]
        shapes = {f.shape for f in frames}
        if len(shapes) > 1:
            raise ValueError(f"{path}: frames have mixed dimensions {sorted(shapes)}")
        arr = np.stack(frames)
        names = tuple(str(p) for p in files)
    elif path.is_file():
        arr = read_gsvf(path)
        if len(arr) < 2:
            raise ValueError(f"{path}: need at least 2 frames, found {len(arr)}")
        names = tuple(f"{path}#{i}" for i in range(len(arr)))
    else:
        raise FileNotFoundError(path)
    return VideoManifest(names, float(fps), arr.shape[2], arr.shape[1]), arr


@dataclass
class CheckpointMeta:
    width: int
    height: int
    num_frames: int
    fps: float = 30.0
    seed: int = 0
    schedule: dict = field(default_factory=dict)

    def fingerprint(self) -> bytes:
        return schedule_fingerprint(self.schedule)


def schedule_fingerprint(schedule: dict) -> bytes:
    text = repr(sorted(schedule.items())).encode()
    return hashlib.sha256(text).digest()


def _camera_arrays(camera: CameraModel):
    state = dict(camera.net.named_parameters())
    yield camera.log_focal
    yield camera.principal
    yield camera.z0
    for name in CAMERA_NET_ORDER:
        yield state[name]


def checkpoint_size(g: int, n: int, num_knots: int, sh_degree: int, hidden: int) -> int:
    k = num_sh_coeffs(sh_degree)
    per_gaussian = n * 3 + 12 + 16 + k * 3 + 1
    net = (8 * hidden + hidden) + (hidden * hidden + hidden) + (7 * hidden + 7) + 7
    return HEADER_SIZE + 8 * num_knots + 4 * (g * per_gaussian + 2 + 2 + 7 + net)


def save_checkpoint(scene: GaussianSet, camera: CameraModel, meta: CheckpointMeta, path) -> None:
    knots = scene.knot_vector.knots if scene.position_model == "spline" else np.zeros(0)
    degree = scene.knot_vector.degree if scene.position_model == "spline" else 0
    header = struct.pack(
        HEADER_FMT, GSVC_MAGIC, GSVC_VERSION, len(scene), degree, scene.control_points.shape[1],
        len(knots), scene.sh_degree, POSITION_MODELS.index(scene.position_model),
        CAMERA_MODES.index(camera.mode), camera.net.hidden, camera.steps_per_unit,
        meta.width, meta.height, meta.num_frames, meta.fps, meta.seed, meta.fingerprint(),
    )
    parts = [header, np.asarray(knots, dtype="<f8").tobytes()]
    tensors = [scene.control_points, scene.scale_coeffs, scene.rotation_coeffs, scene.sh, scene.raw_opacity]
    tensors += list(_camera_arrays(camera))
    for t in tensors:
        parts.append(t.detach().cpu().numpy().astype("<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        for p in parts:
            f.write(p)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, dtype, shape) -> np.ndarray:
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if self.pos + nbytes > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).reshape(shape)
        self.pos += nbytes
        return arr.copy()


def load_checkpoint(path) -> tuple[GaussianSet, CameraModel, CheckpointMeta, bytes]:
    """Returns scene, camera, meta and the stored schedule fingerprint."""
    data = Path(path).read_bytes()
    if data[:4] != GSVC_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {GSVC_MAGIC!r}")
    if len(data) < HEADER_SIZE:
        raise CheckpointError(f"{path}: truncated header ({len(data)} < {HEADER_SIZE} bytes)")
    (_, version, g, degree, n, num_knots, sh_degree, pos_model, cam_mode, hidden, ode_steps,
     width, height, num_frames, fps, seed, fingerprint) = struct.unpack_from(HEADER_FMT, data)
    if version != GSVC_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {GSVC_VERSION}")
    if pos_model >= len(POSITION_MODELS) or cam_mode >= len(CAMERA_MODES):
        raise CheckpointError(f"{path}: corrupt header")
    r = _Reader(data, path)
    r.pos = HEADER_SIZE
    knots = r.take("<f8", (num_knots,))
    k = num_sh_coeffs(sh_degree)
    shapes = [(g, n, 3), (g, 4, 3), (g, 4, 4), (g, k, 3), (g,)]
    arrays = [torch.from_numpy(r.take("<f4", s)) for s in shapes]
    model = POSITION_MODELS[pos_model]
    kv = KnotVector(degree, knots) if model == "spline" else None
    scene = GaussianSet(*arrays, knot_vector=kv, position_model=model)

    camera = CameraModel(width, height, mode=CAMERA_MODES[cam_mode], hidden=hidden, steps_per_unit=ode_steps)
    with torch.no_grad():
        for t in _camera_arrays(camera):
            t.copy_(torch.from_numpy(r.take("<f4", tuple(t.shape))))
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    meta = CheckpointMeta(width, height, num_frames, fps, seed)
    return scene, camera, meta, fingerprint
