"""Spatio-temporal hierarchical training.

Every schedule constant is a fraction of ``total_steps``: a coarse pyramid
level and sparse frame strides first, then full resolution and all frames,
with periodic re-seeding of Gaussians that no frame uses.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .camera import CameraDivergence, CameraModel, Intrinsics
from .config import RunConfig
from .gaussians import (
    COV_POLY_TERMS,
    PARAM_NAMES,
    GaussianSet,
    num_sh_coeffs,
    rgb_to_sh_dc,
)
from .io import frame_times
from .metrics import psnr_from_mse
from .optim import Adan, NonFiniteGradient, lr_at
from .renderer import render
from .spline import default_num_control_points

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_TOP_LEVEL = 8


class TrainingDiverged(RuntimeError):
    """Non-finite loss, gradient or parameter; carries the last good state."""

    def __init__(self, step: int, reason: str, last_good: "FitResult | None"):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step
        self.reason = reason
        self.last_good = last_good


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class TrainSchedule:
    total_steps: int
    pyramid_levels: int = 2
    pyramid_switch: float = 0.3
    temporal_strides: tuple = (4, 2, 1)
    temporal_fractions: tuple = (0.0, 0.15, 0.3)
    densify_fraction: float = 0.25
    warp_period: float = 0.1
    warp_stop: float = 0.6
    camera_freeze: float = 0.6
    knot_refine: bool = False
    spatial_hierarchy: bool = True
    temporal_hierarchy: bool = True
    warping: bool = True

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        s, f = tuple(self.temporal_strides), tuple(self.temporal_fractions)
        if len(s) != len(f) or not s or s[-1] != 1 or any(a <= b for a, b in zip(s, s[1:])):
            raise ValueError(f"temporal strides must decrease to 1, got {s}")
        if f[0] != 0 or any(a >= b for a, b in zip(f, f[1:])):
            raise ValueError(f"temporal fractions must start at 0 and increase, got {f}")
        for name in ("pyramid_switch", "densify_fraction", "warp_period", "warp_stop", "camera_freeze"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "TrainSchedule":
        names = [f for f in cls.__dataclass_fields__ if f != "total_steps"]
        return cls(cfg.total_steps, **{n: getattr(cfg, n) for n in names})

    def at(self, fraction: float) -> int:
        return math.floor(fraction * self.total_steps + 0.5)

    def level_switch_steps(self) -> list[int]:
        n = self.pyramid_levels - 1
        return [self.at(self.pyramid_switch * i / n) for i in range(1, n + 1)]

    def densify_steps(self) -> list[int]:
        # fires at the same point whether or not the spatial hierarchy is on,
        # so ablations compare equal Gaussian budgets
        steps = self.level_switch_steps() or [self.at(self.pyramid_switch)]
        if self.densify_fraction <= 0:
            return []
        return [s for s in steps if 0 < s < self.total_steps]

    def stride_change_steps(self) -> list[int]:
        return [self.at(f) for f in self.temporal_fractions[1:]]

    def warp_steps(self) -> list[int]:
        out, k = [], 1
        while k * self.warp_period < self.warp_stop - 1e-9:
            s = self.at(k * self.warp_period)
            if s >= self.total_steps:
                break
            if s > 0 and s not in out:
                out.append(s)
            k += 1
        return out

    def freeze_step(self) -> int:
        return self.at(self.camera_freeze)

    def fingerprint_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class ScheduleState:
    pyramid_level: int
    temporal_stride: int
    camera_trainable: bool
    warp_due: bool
    densify_due: bool
    refine_due: bool = False


def schedule_state(step: int, sched: TrainSchedule) -> ScheduleState:
    if not 0 <= step < sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps})")
    if sched.spatial_hierarchy:
        level = sched.pyramid_levels - 1 - sum(step >= s for s in sched.level_switch_steps())
    else:
        level = 0
    stride = 1
    if sched.temporal_hierarchy:
        for s, f in zip(sched.temporal_strides, sched.temporal_fractions):
            if step >= sched.at(f):
                stride = s
    return ScheduleState(
        pyramid_level=level,
        temporal_stride=stride,
        camera_trainable=step < sched.freeze_step(),
        warp_due=sched.warping and step in sched.warp_steps(),
        densify_due=step in sched.densify_steps(),
        refine_due=sched.knot_refine and sched.temporal_hierarchy and step in sched.stride_change_steps(),
    )


# ---------------------------------------------------------------- pyramid


@dataclass
class FramePyramid:
    levels: list[np.ndarray]  # level l: (K, H_l, W_l, 3)
    intrinsics: list[Intrinsics]

    def __len__(self) -> int:
        return len(self.levels)


def blur_decimate(frames: np.ndarray) -> np.ndarray:
    """5-tap binomial blur (symmetric edges) then keep even samples, on axes 1 and 2."""
    out = frames
    for axis in (1, 2):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (2, 2)
        p = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out, dtype=np.float64)
        for i, w in enumerate(BINOMIAL_5):
            acc += w * np.take(p, np.arange(i, i + n), axis=axis)
        out = np.take(acc, np.arange(0, n, 2), axis=axis)
    return out


def build_pyramid(frames, levels: int, k: Intrinsics | None = None) -> FramePyramid:
    frames = np.asarray(frames)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    k = k or Intrinsics.default(frames.shape[2], frames.shape[1])
    top = k.level(levels - 1)
    if min(top.width, top.height) < MIN_TOP_LEVEL:
        raise ValueError(f"pyramid top level {top.width}x{top.height} is below {MIN_TOP_LEVEL} px")
    out = [frames]
    for _ in range(1, levels):
        out.append(blur_decimate(out[-1]).astype(frames.dtype))
    return FramePyramid(out, [k.level(l) for l in range(levels)])


# ---------------------------------------------------------------- init


def visible_fraction(radius: float, depth=(0.5, 2.0), ref_depth: float = 1.0) -> float:
    """Expected share of init samples that land inside the image."""
    z = np.linspace(depth[0], depth[1], 1001)
    per_axis = np.minimum(1.0, z / (radius * ref_depth))
    return float(np.mean(per_axis ** 2))


def init_footprint_px(count: int, k: Intrinsics, radius: float = 3.0, depth=(0.5, 2.0)) -> float:
    """Init splat sigma in pixels: about half the spacing of visible samples."""
    n_vis = max(1.0, count * visible_fraction(radius, depth))
    sigma = 0.5 * math.sqrt(k.width * k.height / n_vis)
    return float(np.clip(sigma, 0.5, max(k.width, k.height) / 4))


def _static_positions(points: np.ndarray, n: int, model: str) -> np.ndarray:
    cp = np.zeros((len(points), n, 3))
    if model == "spline":
        cp[:] = points[:, None, :]
    else:
        cp[:, 0] = points
    return cp


def _new_gaussians(points, log_scale, colors, n_ctrl, sh_degree, model, opacity, dtype, knot_vector=None):
    g = len(points)
    scale = np.zeros((g, COV_POLY_TERMS, 3))
    scale[:, 0] = np.asarray(log_scale)[:, None]
    rot = np.zeros((g, COV_POLY_TERMS, 4))
    rot[:, 0, 0] = 1.0
    sh = np.zeros((g, num_sh_coeffs(sh_degree), 3))
    if colors is not None:
        sh[:, 0] = rgb_to_sh_dc(np.asarray(colors, dtype=np.float64))
    raw_op = np.full(g, math.log(opacity / (1 - opacity)))
    t = lambda a: torch.tensor(a, dtype=dtype)  # noqa: E731
    return GaussianSet(t(_static_positions(points, n_ctrl, model)), t(scale), t(rot), t(sh), t(raw_op),
                       knot_vector=knot_vector, position_model=model)


def init_gaussians(count: int, k: Intrinsics, seed: int = 0, *, num_control_points: int = 6,
                   sh_degree: int = 1, position_model: str = "spline", radius: float = 3.0,
                   depth=(0.5, 2.0), ref_depth: float = 1.0, opacity: float = 0.1,
                   dtype=torch.float32) -> GaussianSet:
    """Static Gaussians spread over a box of +-radius frustum half-extents.

    The box is fixed at the reference depth (not widened with depth), so
    the camera may move by several image widths and still find Gaussians.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(count, 3))
    hx, hy = k.width / 2 / k.fx * ref_depth, k.height / 2 / k.fy * ref_depth
    ox, oy = (k.width / 2 - k.cx) / k.fx * ref_depth, (k.height / 2 - k.cy) / k.fy * ref_depth
    pts = np.stack([
        ox + (2 * u[:, 0] - 1) * radius * hx,
        oy + (2 * u[:, 1] - 1) * radius * hy,
        depth[0] + u[:, 2] * (depth[1] - depth[0]),
    ], axis=1)
    sigma_px = init_footprint_px(count, k, radius, depth)
    f = 0.5 * (k.fx + k.fy)
    log_scale = np.log(sigma_px * pts[:, 2] / f)
    return _new_gaussians(pts, log_scale, None, num_control_points, sh_degree, position_model, opacity, dtype)


# ---------------------------------------------------------------- loss


def loss_l2(render_img, target):
    """Mean squared error and its gradient ``2 (render - target) / count``."""
    r = torch.as_tensor(render_img)
    t = torch.as_tensor(target, dtype=r.dtype)
    if r.shape != t.shape:
        raise ValueError(f"render {tuple(r.shape)} and target {tuple(t.shape)} differ")
    diff = r - t
    return (diff * diff).mean(), (2.0 / diff.numel()) * diff.detach()


# ---------------------------------------------------------------- re-seeding


@dataclass
class ReseedView:
    """What re-seeding needs from one rendered frame."""

    error: np.ndarray  # (h, w) squared error summed over channels
    target: np.ndarray  # (h, w, 3)
    R: np.ndarray
    T: np.ndarray
    k: Intrinsics
    depth: float  # median camera depth of the Gaussians visible in this frame


@dataclass
class ReseedReport:
    indices: np.ndarray
    pixels: np.ndarray  # (n, 2) sub-pixel image coordinates
    frames: np.ndarray
    points: np.ndarray  # (n, 3) world


def reseed_view(scene: GaussianSet, frame, target, t: float, default_depth: float = 1.0) -> ReseedView:
    """Build a :class:`ReseedView` from a render ``frame`` at time ``t``."""
    img = frame.image.detach().numpy().astype(np.float64)
    target = np.asarray(target, dtype=np.float64)
    R = frame.R.detach().numpy().astype(np.float64)
    T = frame.T.detach().numpy().astype(np.float64)
    used = np.nonzero(frame.contrib_count > 0)[0]
    if len(used):
        mu = scene.positions(t).detach().numpy()[used].astype(np.float64)
        z = (mu @ R.T + T)[:, 2]
        depth = float(np.median(z))
    else:
        depth = default_depth
    return ReseedView(((img - target) ** 2).sum(-1), target, R, T, frame.intrinsics, depth)


def sample_pixels(views, count: int, rng, uniform_fallback: bool):
    """Frame index and jittered pixel coordinates drawn in proportion to error."""
    totals = np.array([v.error.sum() for v in views], dtype=np.float64)
    if totals.sum() <= 0:
        if not uniform_fallback:
            return None
        fidx = rng.integers(0, len(views), size=count)
        weights = [None] * len(views)
    else:
        fidx = rng.choice(len(views), size=count, p=totals / totals.sum())
        weights = [v.error.ravel() / v.error.sum() if v.error.sum() > 0 else None for v in views]
    pix = np.zeros((count, 2))
    for f in np.unique(fidx):
        sel = np.nonzero(fidx == f)[0]
        h, w = views[f].error.shape
        flat = rng.choice(h * w, size=len(sel), p=weights[f])
        jitter = rng.uniform(size=(len(sel), 2))
        pix[sel, 0] = flat % w + jitter[:, 0]
        pix[sel, 1] = flat // w + jitter[:, 1]
    return fidx, pix


def back_project(pix: np.ndarray, k: Intrinsics, R: np.ndarray, T: np.ndarray, depth: float) -> np.ndarray:
    cam = np.stack([(pix[:, 0] - k.cx) / k.fx * depth, (pix[:, 1] - k.cy) / k.fy * depth,
                    np.full(len(pix), depth)], axis=1)
    return (cam - T) @ R


def _seed_targets(views, fidx, pix):
    pts = np.zeros((len(pix), 3))
    cols = np.zeros((len(pix), 3))
    depths = np.zeros(len(pix))
    for f in np.unique(fidx):
        sel = np.nonzero(fidx == f)[0]
        v = views[f]
        pts[sel] = back_project(pix[sel], v.k, v.R, v.T, v.depth)
        h, w = v.error.shape
        xi = np.clip(pix[sel, 0].astype(int), 0, w - 1)
        yi = np.clip(pix[sel, 1].astype(int), 0, h - 1)
        cols[sel] = v.target[yi, xi]
        depths[sel] = v.depth
    return pts, cols, depths


def warp_unused(scene: GaussianSet, contrib_max: np.ndarray, views, rng, *, sigma_px: float, focal: float,
                threshold: float = 1.0 / 255.0, opacity: float = 0.1) -> ReseedReport:
    """Move Gaussians that no frame uses into high-error pixels (in place).

    ``contrib_max`` is each Gaussian's largest blend weight over the rendered
    frames; ``views`` holds the error maps to sample from (frame 0 by
    default).  Positions become static at the back-projected target,
    covariance and opacity return to their init values and the DC color
    takes the target pixel's color.
    """
    idx = np.nonzero(np.asarray(contrib_max) < threshold)[0]
    empty = ReseedReport(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0, np.int64), np.zeros((0, 3)))
    if len(idx) == 0:
        return empty
    drawn = sample_pixels(views, len(idx), rng, uniform_fallback=False)
    if drawn is None:
        return empty
    fidx, pix = drawn
    pts, cols, depths = _seed_targets(views, fidx, pix)
    fresh = _new_gaussians(pts, np.log(sigma_px * depths / focal), cols, scene.control_points.shape[1],
                           scene.sh_degree, scene.position_model, opacity, scene.dtype, scene.knot_vector)
    ti = torch.from_numpy(idx)
    with torch.no_grad():
        for name in PARAM_NAMES:
            getattr(scene, name)[ti] = getattr(fresh, name)
    return ReseedReport(idx, pix, fidx, pts)


def densify(scene: GaussianSet, views, add_count: int, rng, *, sigma_px: float, focal: float,
            opacity: float = 0.1) -> tuple[GaussianSet, ReseedReport]:
    """Append ``add_count`` Gaussians seeded at error-weighted pixels of ``views``."""
    if add_count < 0:
        raise ValueError("add_count must be >= 0")
    g = len(scene)
    if add_count == 0:
        return scene, ReseedReport(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0, np.int64), np.zeros((0, 3)))
    fidx, pix = sample_pixels(views, add_count, rng, uniform_fallback=True)
    pts, cols, depths = _seed_targets(views, fidx, pix)
    fresh = _new_gaussians(pts, np.log(sigma_px * depths / focal), cols, scene.control_points.shape[1],
                           scene.sh_degree, scene.position_model, opacity, scene.dtype, scene.knot_vector)
    return scene.concat(fresh), ReseedReport(np.arange(g, g + add_count), pix, fidx, pts)


def refine_knots(scene: GaussianSet) -> GaussianSet:
    """One curve-preserving knot in the widest span of every position spline."""
    return scene.refine_knots()


# ---------------------------------------------------------------- fit


@dataclass
class FitResult:
    scene: GaussianSet
    camera: CameraModel
    log: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    config: RunConfig | None = None
    schedule: TrainSchedule | None = None


class Trainer:
    """Holds all training state; :meth:`run` executes the schedule."""

    def __init__(self, frames, config: RunConfig | None = None, ci: bool = False):
        cfg = config or RunConfig()
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"frames must be (K, H, W, 3), got {frames.shape}")
        if len(frames) < 2:
            raise ValueError("need at least 2 frames")
        self.cfg, self.ci = cfg, ci
        self.sched = TrainSchedule.from_config(cfg)
        self.dtype = torch.float32
        K, H, W, _ = frames.shape
        self.times = frame_times(K)
        levels = cfg.pyramid_levels if cfg.spatial_hierarchy else 1
        pyr = build_pyramid(frames, levels)
        self.targets = [torch.from_numpy(np.ascontiguousarray(lv)) for lv in pyr.levels]
        self.k0 = Intrinsics.default(W, H)

        n_ctrl = cfg.num_control_points or default_num_control_points(K / cfg.fps)
        self.sigma_px = init_footprint_px(cfg.num_gaussians, self.k0, cfg.init_radius, cfg.init_depth)
        self.scene = init_gaussians(
            cfg.num_gaussians, self.k0, cfg.seed, num_control_points=n_ctrl, sh_degree=cfg.sh_degree,
            position_model=cfg.position_model, radius=cfg.init_radius, depth=cfg.init_depth,
            opacity=cfg.init_opacity, dtype=self.dtype,
        ).requires_grad_(True)
        self.camera = CameraModel(W, H, mode=cfg.camera_mode, hidden=cfg.ode_hidden,
                                  steps_per_unit=cfg.ode_steps, dtype=self.dtype, seed=cfg.seed)
        trainable = {id(p) for p in self.camera.trainable_parameters()}
        for p in self.camera.parameters():
            p.requires_grad_(id(p) in trainable)

        groups = [{"params": [getattr(self.scene, n)], "name": n} for n in PARAM_NAMES]
        if trainable:
            groups.append({"params": self.camera.trainable_parameters(), "name": "camera",
                           "lr_mult": cfg.camera_lr_mult})
        self.opt = Adan(groups, lr=cfg.lr, gamma=cfg.gamma, betas=cfg.betas, eps=cfg.eps)

        self.frame_rng = np.random.default_rng([cfg.seed, 1])
        self.seed_rng = np.random.default_rng([cfg.seed, 2])
        self.log: list[dict] = []
        self.events: list[dict] = []
        self.frozen_poses = None
        self.last_good: FitResult | None = None
        self._t0 = time.perf_counter()

    # -- helpers

    @property
    def num_frames(self) -> int:
        return len(self.times)

    def focal(self) -> float:
        k = self.camera.intrinsics(0)
        return 0.5 * (k.fx + k.fy)

    def pose(self, frame: int):
        if self.frozen_poses is not None:
            return self.frozen_poses[frame]
        return None

    def render(self, frame: int, level: int):
        return render(self.scene, self.camera, float(self.times[frame]), level=level,
                      tile_size=self.cfg.tile_size, pose=self.pose(frame))

    def probe_frame(self, stride: int) -> int:
        mid = (self.num_frames - 1) / 2
        if stride > 1:
            held = [k for k in range(self.num_frames) if k % stride]
            if held:
                return min(held, key=lambda k: (abs(k - mid), k))
        return self.num_frames // 2

    def _replace_param(self, name: str, new: torch.Tensor) -> None:
        old = getattr(self.scene, name)
        new = new.detach().clone().requires_grad_(True)
        self.opt.replace_param(old, new)
        setattr(self.scene, name, new)

    def _set_scene(self, scene: GaussianSet) -> None:
        for name in PARAM_NAMES:
            self._replace_param(name, getattr(scene, name))
        self.scene.knot_vector = scene.knot_vector

    def _views(self, level: int, frames) -> tuple[list[ReseedView], list]:
        views, rendered = [], []
        with torch.no_grad():
            for f in frames:
                fr = self.render(f, level)
                rendered.append(fr)
                views.append(reseed_view(self.scene, fr, self.targets[level][f].numpy(), float(self.times[f])))
        return views, rendered

    def _snapshot(self) -> FitResult:
        scene = copy.deepcopy(self.scene.detached())
        camera = copy.deepcopy(self.camera)
        return FitResult(scene, camera, list(self.log), list(self.events), self.cfg, self.sched)

    # -- events

    def _freeze_camera(self, step: int) -> None:
        with torch.no_grad():
            self.frozen_poses = [self.camera.view(float(t)) for t in self.times]
            self.frozen_poses = [(R.detach(), T.detach()) for R, T in self.frozen_poses]
        for p in self.camera.parameters():
            p.requires_grad_(False)
        try:
            self.opt.group("camera")["frozen"] = True
        except KeyError:
            pass
        self.events.append({"step": step, "event": "camera_freeze"})

    def _refine(self, step: int) -> None:
        if self.scene.position_model != "spline":
            return
        before = self.scene.control_points.shape[1]
        self._set_scene(refine_knots(self.scene.detached()))
        self.events.append({"step": step, "event": "knot_refine", "control_points": [before, before + 1]})

    def _densify(self, step: int, level: int) -> None:
        add = int(round(self.cfg.densify_fraction * self.cfg.num_gaussians))
        views, _ = self._views(level, range(self.num_frames))
        grown, report = densify(self.scene.detached(), views, add, self.seed_rng, sigma_px=self.sigma_px,
                                focal=self.focal(), opacity=self.cfg.init_opacity)
        before = len(self.scene)
        self._set_scene(grown)
        self.events.append({"step": step, "event": "densify", "added": len(report.indices),
                            "num_gaussians": [before, len(self.scene)]})

    def _warp(self, step: int, level: int) -> None:
        views, rendered = self._views(level, range(self.num_frames))
        contrib = np.max(np.stack([fr.contrib_count for fr in rendered]), axis=0)
        source = views if self.cfg.warp_error == "all" else views[:1]
        report = warp_unused(self.scene, contrib, source, self.seed_rng, sigma_px=self.sigma_px,
                             focal=self.focal(), threshold=self.cfg.warp_threshold,
                             opacity=self.cfg.init_opacity)
        for name in PARAM_NAMES:
            self.opt.reset_rows(getattr(self.scene, name), report.indices)
        self.events.append({"step": step, "event": "warp", "moved": len(report.indices)})

    # -- main loop

    def _diverged(self, step: int, reason: str):
        return TrainingDiverged(step, reason, self.last_good)

    def _record(self, step: int, loss: float, stride: int) -> None:
        probe = self.probe_frame(stride)
        with torch.no_grad():
            img = self.render(probe, 0).image
            mse = float(((img - self.targets[0][probe]) ** 2).mean())
        rec = {"step": step, "loss": loss, "psnr": float(psnr_from_mse(mse)), "num_gaussians": len(self.scene),
               "lr": lr_at(step, self.cfg.lr, self.cfg.gamma),
               "wall_ms": None if self.ci else round(1000 * (time.perf_counter() - self._t0), 3)}
        self.log.append(rec)
        self.last_good = self._snapshot()

    def step(self, step: int) -> float:
        st = schedule_state(step, self.sched)
        if not st.camera_trainable and self.frozen_poses is None and self.cfg.camera_mode != "none":
            self._freeze_camera(step)
        if st.refine_due:
            self._refine(step)
        if st.densify_due:
            self._densify(step, st.pyramid_level)
        if st.warp_due:
            self._warp(step, st.pyramid_level)

        admitted = np.arange(0, self.num_frames, st.temporal_stride)
        f = int(self.frame_rng.choice(admitted))
        try:
            frame = self.render(f, st.pyramid_level)
        except CameraDivergence as e:
            raise self._diverged(step, str(e)) from e
        loss, _ = loss_l2(frame.image, self.targets[st.pyramid_level][f])
        if not torch.isfinite(loss):
            raise self._diverged(step, f"loss is {float(loss.detach())}")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        if not self.cfg.time_varying_scale and self.scene.scale_coeffs.grad is not None:
            self.scene.scale_coeffs.grad[:, 1:] = 0
        try:
            self.opt.step()
        except NonFiniteGradient as e:
            raise self._diverged(step, str(e)) from e
        for name in PARAM_NAMES:
            if not torch.isfinite(getattr(self.scene, name)).all():
                raise self._diverged(step, f"non-finite values in {name}")
        value = float(loss.detach())
        if step % self.cfg.log_every == 0 or step == self.sched.total_steps - 1:
            self._record(step, value, st.temporal_stride)
        return value

    def run(self, callback=None) -> FitResult:
        for s in range(self.sched.total_steps):
            loss = self.step(s)
            if callback is not None:
                callback(s, loss, self)
        return self.result()

    def result(self) -> FitResult:
        return FitResult(self.scene.detached(), self.camera, self.log, self.events, self.cfg, self.sched)


def fit(frames, config: RunConfig | None = None, ci: bool = False, callback=None) -> FitResult:
    """Fit a dynamic-Gaussian video to ``frames`` of shape (K, H, W, 3) in [0, 1]."""
    return Trainer(frames, config, ci=ci).run(callback)
