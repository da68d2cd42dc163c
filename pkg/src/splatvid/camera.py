"""Learned camera: constant intrinsics plus a Neural-ODE extrinsic trajectory.

The ODE state is the world-to-camera pose itself, ``z = (qw, qx, qy, qz, tx, ty, tz)``.
Poses are integrated over normalized video time with fixed-step RK4 and the
gradient is taken through the solver steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
from torch import nn

from .gaussians import normalize_quaternion, quat_to_rotmat

STATE_DIM = 7
CAMERA_MODES = ("ode", "static", "none")


class CameraDivergence(FloatingPointError):
    """The pose trajectory produced a non-finite value."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image")

    @classmethod
    def default(cls, width: int, height: int) -> "Intrinsics":
        f = float(max(width, height))
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def level(self, level: int) -> "Intrinsics":
        k = self
        for _ in range(level):
            k = replace(
                k, fx=k.fx / 2, fy=k.fy / 2, cx=(k.cx + 0.5) / 2, cy=(k.cy + 0.5) / 2,
                width=-(-k.width // 2), height=-(-k.height // 2),
            )
        return k


def level_scale(level: int):
    """``(focal factor, principal-point offset)`` with ``c_l = (c + offset) * factor``."""
    f = 0.5 ** level
    return f, ((2 ** level) - 1) / 2.0


def resample_intrinsics(k: Intrinsics, scale_x: float, scale_y: float) -> Intrinsics:
    if scale_x <= 0 or scale_y <= 0:
        raise ValueError(f"resampling scales must be positive, got ({scale_x}, {scale_y})")
    w = int(round(k.width * scale_x))
    h = int(round(k.height * scale_y))
    if w < 1 or h < 1:
        raise ValueError(f"resampled image would be {w}x{h} pixels")
    return Intrinsics(k.fx * scale_x, k.fy * scale_y, k.cx * scale_x, k.cy * scale_y, w, h)


class OdeNet(nn.Module):
    """``f_theta(z, t)``: 8 -> H -> H -> 7, tanh hidden layers, gain-scaled tanh output."""

    def __init__(self, hidden: int = 64, dtype=torch.float32, generator: torch.Generator | None = None):
        super().__init__()
        self.hidden = hidden
        self.l1 = nn.Linear(STATE_DIM + 1, hidden, dtype=dtype)
        self.l2 = nn.Linear(hidden, hidden, dtype=dtype)
        self.l3 = nn.Linear(hidden, STATE_DIM, dtype=dtype)
        self.gain = nn.Parameter(torch.ones(STATE_DIM, dtype=dtype))
        with torch.no_grad():
            for layer in (self.l1, self.l2):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.uniform_(-bound, bound, generator=generator)
            # zero output layer: the camera starts static
            self.l3.weight.zero_()
            self.l3.bias.zero_()

    def forward(self, z: torch.Tensor, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=z.dtype).reshape(z.shape[:-1] + (1,))
        h = torch.tanh(self.l1(torch.cat([z, t], dim=-1)))
        h = torch.tanh(self.l2(h))
        return self.gain * torch.tanh(self.l3(h))


def ode_derivative(net, z: torch.Tensor, t: float) -> torch.Tensor:
    dz = net(z, t)
    if not torch.isfinite(dz).all():
        raise CameraDivergence(f"non-finite pose derivative at t={t}")
    return dz


def _renormalize(z: torch.Tensor) -> torch.Tensor:
    return torch.cat([normalize_quaternion(z[:4]), z[4:]])


def _rk4(f, z, t, h):
    k1 = f(z, t)
    k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(z + h * k3, t + h)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_poses(f, z0: torch.Tensor, frame_times, steps_per_unit: int = 64, renormalize: bool = True):
    """Integrate ``dz/dt = f(z, t)`` from 0 and return the state at each requested time.

    The solver walks a fixed grid of spacing ``1/steps_per_unit``; a requested
    time between grid points is reached by one partial step from the grid
    point below it, so the grid trajectory never depends on which times were
    asked for.
    """
    times = [float(t) for t in frame_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("frame times must be sorted ascending")
    if times and times[0] < 0:
        raise ValueError("frame times must be >= 0")
    h = 1.0 / steps_per_unit
    fix = _renormalize if renormalize else (lambda z: z)
    out = []
    z = z0
    k = 0
    for tau in times:
        target = int(math.floor(tau * steps_per_unit + 1e-9))
        while k < target:
            z = fix(_rk4(f, z, k * h, h))
            k += 1
            if not torch.isfinite(z).all():
                raise CameraDivergence(f"non-finite pose state after RK4 step {k}")
        rest = tau - k * h
        if rest > 1e-12:
            zt = fix(_rk4(f, z, k * h, rest))
            if not torch.isfinite(zt).all():
                raise CameraDivergence(f"non-finite pose state in partial step after grid step {k}")
            out.append(zt)
        else:
            out.append(z)
    return out


def pose_to_view(z: torch.Tensor):
    """World-to-camera rotation and translation: ``p_cam = R @ p + T``."""
    R = quat_to_rotmat(normalize_quaternion(z[:4]))
    return R, z[4:7]


def identity_state(dtype=torch.float32) -> torch.Tensor:
    return torch.tensor([1.0, 0, 0, 0, 0, 0, 0], dtype=dtype)


class CameraModel(nn.Module):
    """Learnable intrinsics, initial pose ``z(0)`` and ODE network.

    ``mode`` selects the ablation: ``"ode"`` (full model), ``"static"`` (one
    learned pose for the whole clip) or ``"none"`` (fixed identity pose and
    fixed default intrinsics).
    """

    def __init__(self, width: int, height: int, mode: str = "ode", hidden: int = 64,
                 steps_per_unit: int = 64, dtype=torch.float32, seed: int = 0):
        super().__init__()
        if mode not in CAMERA_MODES:
            raise ValueError(f"camera mode must be one of {CAMERA_MODES}, got {mode!r}")
        self.mode = mode
        self.width, self.height = int(width), int(height)
        self.steps_per_unit = steps_per_unit
        k = Intrinsics.default(width, height)
        # log focal lengths and principal point as a fraction of the image size
        self.log_focal = nn.Parameter(torch.tensor([math.log(k.fx), math.log(k.fy)], dtype=dtype))
        self.principal = nn.Parameter(torch.tensor([0.5, 0.5], dtype=dtype))
        self.z0 = nn.Parameter(identity_state(dtype))
        gen = torch.Generator().manual_seed(seed)
        self.net = OdeNet(hidden, dtype=dtype, generator=gen)

    @property
    def dtype(self):
        return self.z0.dtype

    def trainable_parameters(self):
        if self.mode == "none":
            return []
        params = [self.log_focal, self.principal, self.z0]
        if self.mode == "ode":
            params += list(self.net.parameters())
        return params

    def intrinsics_tensors(self, level: int = 0):
        """``(fx, fy, cx, cy)`` tensors and integer size at pyramid ``level``."""
        factor, offset = level_scale(level)
        f = torch.exp(self.log_focal)
        size = torch.tensor([self.width, self.height], dtype=self.dtype)
        c = self.principal * size
        k = Intrinsics.default(self.width, self.height).level(level)
        return (f[0] * factor, f[1] * factor, (c[0] + offset) * factor, (c[1] + offset) * factor), (k.width, k.height)

    def intrinsics(self, level: int = 0) -> Intrinsics:
        (fx, fy, cx, cy), (w, h) = self.intrinsics_tensors(level)
        fx, fy, cx, cy = (float(v.detach()) for v in (fx, fy, cx, cy))
        return Intrinsics(fx, fy, cx, cy, w, h)

    def derivative(self, z, t):
        return ode_derivative(self.net, z, t)

    def states(self, times) -> list[torch.Tensor]:
        """Pose states at sorted normalized times."""
        if self.mode == "none":
            return [identity_state(self.dtype) for _ in times]
        if self.mode == "static":
            return [self.z0 for _ in times]
        return integrate_poses(self.derivative, self.z0, times, self.steps_per_unit)

    def view(self, t: float):
        return pose_to_view(self.states([t])[0])
