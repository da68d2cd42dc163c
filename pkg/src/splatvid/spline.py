"""Clamped B-spline curves.

Knot vectors are clamped on [0, 1]: the first ``p + 1`` knots are 0, the last
``p + 1`` are 1. Evaluation is span-local (``O(p^2)`` per parameter value).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KnotVector",
    "SplineCurve",
    "make_clamped_knots",
    "find_span",
    "basis_weights",
    "eval_curve",
    "insert_knot",
    "fit_least_squares",
    "design_matrix",
    "default_num_control_points",
]


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 1:
            raise ValueError(f"degree must be >= 1, got {p}")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise ValueError("knot vector is not clamped on [0, 1]")

    @property
    def num_control_points(self) -> int:
        return self.knots.size - self.degree - 1

    def interior(self) -> np.ndarray:
        p = self.degree
        return self.knots[p + 1 : -(p + 1)]


@dataclass(frozen=True)
class SplineCurve:
    knot_vector: KnotVector
    control_points: np.ndarray  # (N, d)

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        if cp.ndim == 1:
            cp = cp[:, None]
        object.__setattr__(self, "control_points", cp)
        if cp.shape[0] != self.knot_vector.num_control_points:
            raise ValueError(
                f"{cp.shape[0]} control points do not match a knot vector "
                f"expecting {self.knot_vector.num_control_points}"
            )

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            return eval_curve(self, float(t))
        return np.stack([eval_curve(self, float(ti)) for ti in t])


def make_clamped_knots(num_control_points: int, degree: int = 3) -> KnotVector:
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if num_control_points < degree + 1:
        raise ValueError(
            f"a degree-{degree} spline needs at least {degree + 1} control points, "
            f"got {num_control_points}"
        )
    n_interior = num_control_points - degree - 1
    interior = np.arange(1, n_interior + 1, dtype=np.float64) / (n_interior + 1)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(degree, knots)


def default_num_control_points(duration_seconds: float) -> int:
    """Two control points per started second plus two, never fewer than six."""
    return max(6, 2 + 2 * int(np.ceil(duration_seconds)))


def find_span(t: float, kv: KnotVector) -> int:
    """Index ``i`` with ``knots[i] <= t < knots[i+1]``; the last span is closed at 1."""
    p, U = kv.degree, kv.knots
    n = kv.num_control_points - 1
    if t >= U[n + 1]:
        return n
    # rightmost i with U[i] <= t, restricted to [p, n]
    i = int(np.searchsorted(U, t, side="right")) - 1
    return min(max(i, p), n)


def basis_weights(t: float, kv: KnotVector) -> tuple[int, np.ndarray]:
    """Nonzero basis functions at ``t``.

    Returns the span index ``i`` and the values of ``N_{i-p,p} .. N_{i,p}``.
    """
    if not (0.0 <= t <= 1.0) or not np.isfinite(t):
        raise ValueError(f"spline parameter must lie in [0, 1], got {t}")
    p, U = kv.degree, kv.knots
    span = find_span(t, kv)
    N = np.zeros(p + 1)
    if t == U[p] or t == U[-p - 1]:  # clamped ends: exactly one-hot, the recursion can miss by an ulp
        N[0 if t == U[p] else p] = 1.0
        return span, N
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = t - U[span + 1 - j]
        right[j] = U[span + j] - t
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return span, N


def eval_curve(curve: SplineCurve, t: float) -> np.ndarray:
    span, w = basis_weights(t, curve.knot_vector)
    p = curve.degree
    return w @ curve.control_points[span - p : span + 1]


def design_matrix(ts, kv: KnotVector) -> np.ndarray:
    """Dense ``(len(ts), N)`` matrix of basis values."""
    ts = np.asarray(ts, dtype=np.float64).ravel()
    B = np.zeros((ts.size, kv.num_control_points))
    p = kv.degree
    for row, t in enumerate(ts):
        span, w = basis_weights(float(t), kv)
        B[row, span - p : span + 1] = w
    return B


def insert_knot(curve: SplineCurve, u: float) -> SplineCurve:
    """Boehm insertion of a single knot; the curve shape is unchanged."""
    kv = curve.knot_vector
    p, U = kv.degree, kv.knots
    if not (0.0 < u < 1.0):
        raise ValueError(f"inserted knot must be strictly inside (0, 1), got {u}")
    multiplicity = int(np.count_nonzero(U == u))
    if multiplicity >= p:
        raise ValueError(f"knot {u} already has multiplicity {multiplicity} (max {p})")
    k = find_span(u, kv)
    P = curve.control_points
    n = P.shape[0]
    Q = np.empty((n + 1, P.shape[1]))
    Q[: k - p + 1] = P[: k - p + 1]
    Q[k + 1 :] = P[k:]
    for i in range(k - p + 1, k + 1):
        alpha = (u - U[i]) / (U[i + p] - U[i])
        Q[i] = alpha * P[i] + (1.0 - alpha) * P[i - 1]
    new_knots = np.insert(U, k + 1, u)
    return SplineCurve(KnotVector(p, new_knots), Q)


def fit_least_squares(samples, num_control_points: int, degree: int = 3) -> SplineCurve:
    """Least-squares spline through ``(t, point)`` samples on uniform clamped knots.

    Raises ``np.linalg.LinAlgError`` when the samples do not constrain every
    control point.
    """
    ts = np.array([s[0] for s in samples], dtype=np.float64)
    pts = np.array([np.atleast_1d(s[1]) for s in samples], dtype=np.float64)
    if ts.size < num_control_points:
        raise ValueError(f"need >= {num_control_points} samples, got {ts.size}")
    kv = make_clamped_knots(num_control_points, degree)
    B = design_matrix(ts, kv)
    rank = np.linalg.matrix_rank(B)
    if rank < num_control_points:
        raise np.linalg.LinAlgError(
            f"design matrix is rank deficient ({rank} < {num_control_points}); "
            "samples leave some spans unconstrained"
        )
    Qm, Rm = np.linalg.qr(B)
    cp = np.linalg.solve(Rm, Qm.T @ pts)
    return SplineCurve(kv, cp)
