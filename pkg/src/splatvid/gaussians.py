"""Dynamic Gaussian primitives.

Each Gaussian carries a B-spline position trajectory, cubic polynomials for its
log-scales and raw quaternion, and time-constant SH color and opacity. The
scene is stored as a structure of arrays (:class:`GaussianSet`) so every
per-frame quantity is one batched tensor expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .spline import KnotVector, SplineCurve, basis_weights, insert_knot, make_clamped_knots

COV_POLY_TERMS = 4  # cubic polynomial in t
LOG_SCALE_MIN, LOG_SCALE_MAX = -12.0, 6.0
SH_DC_OFFSET = 0.5

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """Real SH basis values at unit directions, shape ``(M, (degree+1)^2)``."""
    if not 0 <= degree <= 3:
        raise ValueError(f"SH degree must be in [0, 3], got {degree}")
    x, y, z = dirs.unbind(-1)
    out = [torch.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return torch.stack(out, dim=-1)


def sh_to_rgb(sh: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Evaluate ``(M, K, 3)`` SH coefficients along ``(M, 3)`` unit directions."""
    degree = int(round(math.sqrt(sh.shape[-2]))) - 1
    basis = sh_basis(dirs, degree)
    rgb = torch.einsum("mk,mkc->mc", basis, sh) + SH_DC_OFFSET
    return rgb.clamp_min(0.0)


def rgb_to_sh_dc(rgb):
    return (rgb - SH_DC_OFFSET) / SH_C0


def time_powers(t: float, n: int, like: torch.Tensor) -> torch.Tensor:
    return torch.tensor([t ** j for j in range(n)], dtype=like.dtype, device=like.device)


def eval_log_scale(scale_coeffs: torch.Tensor, t: float) -> torch.Tensor:
    tp = time_powers(t, scale_coeffs.shape[-2], scale_coeffs)
    return torch.einsum("j,mjk->mk", tp, scale_coeffs).clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)


def eval_scale(scale_coeffs: torch.Tensor, t: float) -> torch.Tensor:
    return torch.exp(eval_log_scale(scale_coeffs, t))


def eval_quaternion(rotation_coeffs: torch.Tensor, t: float) -> torch.Tensor:
    """Normalized ``(w, x, y, z)`` quaternions; near-zero norms become identity."""
    tp = time_powers(t, rotation_coeffs.shape[-2], rotation_coeffs)
    q = torch.einsum("j,mjk->mk", tp, rotation_coeffs)
    return normalize_quaternion(q)


def normalize_quaternion(q: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    norm = q.norm(dim=-1, keepdim=True)
    identity = torch.zeros_like(q)
    identity[..., 0] = 1.0
    ok = norm > eps
    return torch.where(ok, q / torch.where(ok, norm, torch.ones_like(norm)), identity)


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrices from unit quaternions ``(..., 4)`` in ``(w, x, y, z)`` order."""
    w, x, y, z = q.unbind(-1)
    R = torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def eval_covariance(scale_coeffs: torch.Tensor, rotation_coeffs: torch.Tensor, t: float) -> torch.Tensor:
    """``Sigma(t) = (R S)(R S)^T`` for every Gaussian, shape ``(M, 3, 3)``."""
    R = quat_to_rotmat(eval_quaternion(rotation_coeffs, t))
    M = R * eval_scale(scale_coeffs, t)[:, None, :]
    return M @ M.transpose(-1, -2)


def position_weights(t: float, model: str, knot_vector: KnotVector | None, n: int):
    """Dense weight vector mapping the ``n`` position coefficients to a point at ``t``.

    For splines only ``p + 1`` entries are nonzero; the returned slice marks them.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"normalized time must lie in [0, 1], got {t}")
    if model == "spline":
        span, w = basis_weights(t, knot_vector)
        p = knot_vector.degree
        return w, slice(span - p, span + 1)
    if model == "polynomial":
        return np.array([t ** j for j in range(n)]), slice(0, n)
    raise ValueError(f"unknown position model {model!r}")


def eval_positions(coeffs: torch.Tensor, t: float, model: str = "spline", knot_vector=None) -> torch.Tensor:
    """Positions at time ``t`` from ``(M, N, 3)`` control points (or monomial coefficients)."""
    w, sl = position_weights(t, model, knot_vector, coeffs.shape[1])
    w = torch.as_tensor(w, dtype=coeffs.dtype, device=coeffs.device)
    return torch.einsum("n,mnc->mc", w, coeffs[:, sl])


@dataclass
class DynamicGaussian:
    """A single primitive, held as numpy arrays."""

    control_points: np.ndarray  # (N, 3)
    scale_coeffs: np.ndarray  # (4, 3)
    rotation_coeffs: np.ndarray  # (4, 4)
    sh_coeffs: np.ndarray  # ((d+1)^2, 3)
    raw_opacity: float
    knot_vector: KnotVector | None = None
    position_model: str = "spline"

    def __post_init__(self):
        if self.knot_vector is None and self.position_model == "spline":
            self.knot_vector = make_clamped_knots(len(self.control_points), 3)
        k = self.sh_coeffs.shape[0]
        if int(round(math.sqrt(k))) ** 2 != k:
            raise ValueError(f"SH coefficient count {k} is not a perfect square")

    @property
    def position_spline(self) -> SplineCurve:
        return SplineCurve(self.knot_vector, self.control_points)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.raw_opacity)))

    def _t(self, a):
        return torch.as_tensor(np.asarray(a, dtype=np.float64))[None]

    def eval_position(self, t: float) -> np.ndarray:
        return eval_positions(self._t(self.control_points), t, self.position_model, self.knot_vector)[0].numpy()

    def eval_scale(self, t: float) -> np.ndarray:
        return eval_scale(self._t(self.scale_coeffs), t)[0].numpy()

    def eval_rotation(self, t: float) -> np.ndarray:
        return eval_quaternion(self._t(self.rotation_coeffs), t)[0].numpy()

    def eval_covariance(self, t: float) -> np.ndarray:
        return eval_covariance(self._t(self.scale_coeffs), self._t(self.rotation_coeffs), t)[0].numpy()

    def sh_color(self, view_dir) -> np.ndarray:
        d = torch.as_tensor(np.asarray(view_dir, dtype=np.float64))[None]
        return sh_to_rgb(self._t(self.sh_coeffs), d)[0].numpy()


PARAM_NAMES = ("control_points", "scale_coeffs", "rotation_coeffs", "sh", "raw_opacity")


@dataclass
class GaussianSet:
    """All primitives as contiguous per-field tensors of leading length ``G``."""

    control_points: torch.Tensor  # (G, N, 3)
    scale_coeffs: torch.Tensor  # (G, 4, 3)
    rotation_coeffs: torch.Tensor  # (G, 4, 4)
    sh: torch.Tensor  # (G, K, 3)
    raw_opacity: torch.Tensor  # (G,)
    knot_vector: KnotVector | None = None
    position_model: str = "spline"

    def __post_init__(self):
        g = self.control_points.shape[0]
        for name in PARAM_NAMES:
            if getattr(self, name).shape[0] != g:
                raise ValueError(f"field {name} has length {getattr(self, name).shape[0]}, expected {g}")
        if self.position_model == "spline":
            if self.knot_vector is None:
                self.knot_vector = make_clamped_knots(self.control_points.shape[1], 3)
            if self.knot_vector.num_control_points != self.control_points.shape[1]:
                raise ValueError("knot vector does not match control point count")

    def __len__(self) -> int:
        return self.control_points.shape[0]

    @property
    def active_count(self) -> int:
        return len(self)

    @property
    def sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh.shape[1]))) - 1

    @property
    def dtype(self):
        return self.control_points.dtype

    def params(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def requires_grad_(self, flag: bool = True) -> "GaussianSet":
        for p in self.params().values():
            p.requires_grad_(flag)
        return self

    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_opacity)

    def positions(self, t: float) -> torch.Tensor:
        return eval_positions(self.control_points, t, self.position_model, self.knot_vector)

    def covariances(self, t: float) -> torch.Tensor:
        return eval_covariance(self.scale_coeffs, self.rotation_coeffs, t)

    def gaussian(self, i: int) -> DynamicGaussian:
        f = lambda x: x[i].detach().cpu().double().numpy()  # noqa: E731
        return DynamicGaussian(
            f(self.control_points), f(self.scale_coeffs), f(self.rotation_coeffs), f(self.sh),
            float(f(self.raw_opacity)), self.knot_vector, self.position_model,
        )

    def detached(self) -> "GaussianSet":
        return GaussianSet(
            **{k: v.detach().clone() for k, v in self.params().items()},
            knot_vector=self.knot_vector, position_model=self.position_model,
        )

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        if other.position_model != self.position_model or other.control_points.shape[1:] != self.control_points.shape[1:]:
            raise ValueError("cannot concatenate Gaussian sets with different layouts")
        return GaussianSet(
            **{k: torch.cat([v.detach(), getattr(other, k).detach()]) for k, v in self.params().items()},
            knot_vector=self.knot_vector, position_model=self.position_model,
        )

    def refine_knots(self) -> "GaussianSet":
        """Insert a knot at the midpoint of the widest interior span of every trajectory.

        All trajectories share one knot vector, so the insertion is a single
        linear map applied to every Gaussian's control points.
        """
        if self.position_model != "spline":
            raise ValueError("knot refinement needs spline positions")
        kv = self.knot_vector
        U = kv.knots
        p = kv.degree
        spans = U[p + 1 : -p] - U[p:-(p + 1)]
        j = int(np.argmax(spans)) + p
        u = 0.5 * (U[j] + U[j + 1])
        n = kv.num_control_points
        # insertion is linear in the control points: push the identity through it
        basis = SplineCurve(kv, np.eye(n))
        refined = insert_knot(basis, u)
        Mx = torch.as_tensor(refined.control_points, dtype=self.dtype)  # (n+1, n)
        cp = torch.einsum("ij,gjc->gic", Mx, self.control_points.detach())
        params = {k: v.detach().clone() for k, v in self.params().items()}
        params["control_points"] = cp
        return GaussianSet(**params, knot_vector=refined.knot_vector, position_model="spline")
