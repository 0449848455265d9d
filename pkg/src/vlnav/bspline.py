"""Uniform B-spline trajectories.

A trajectory of degree k over control points P_0..P_n uses the unclamped
uniform knot vector u_i = i * dt.  The curve is defined on [u_k, u_{n+1}],
so its duration is (n + 1 - k) * dt.  Externally time runs from
`start_time` to `start_time + duration`; the k*dt knot offset is internal.

Derivatives of a uniform B-spline are uniform B-splines of one degree less
over differenced control points: V_i = (P_{i+1} - P_i) / dt, and repeating
the differencing gives acceleration and jerk control points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DEFAULT_DEGREE = 3
DOMAIN_EPS = 1e-9


class OutOfDomainError(ValueError):
    """Evaluation parameter lies outside the spline's valid span."""


class OrderTooHighError(ValueError):
    """Derivative order exceeds the spline degree."""


class TooFewPointsError(ValueError):
    """A degree-k spline needs at least k+1 control points."""


@dataclass(frozen=True)
class BSplineTrajectory:
    control_points: np.ndarray  # (n+1, 3), world frame, meters
    degree: int = DEFAULT_DEGREE
    knot_interval: float = 0.5  # seconds
    start_time: float = 0.0

    def __post_init__(self):
        pts = np.array(self.control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("control_points must have shape (n+1, 3)")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if pts.shape[0] < self.degree + 1:
            raise TooFewPointsError(
                f"degree {self.degree} needs >= {self.degree + 1} control points, "
                f"got {pts.shape[0]}"
            )
        if not self.knot_interval > 0:
            raise ValueError("knot_interval must be positive")
        if not np.isfinite(pts).all():
            raise ValueError("control points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "control_points", pts)

    @property
    def num_control_points(self) -> int:
        return self.control_points.shape[0]

    @property
    def duration(self) -> float:
        return (self.num_control_points - self.degree) * self.knot_interval

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def _spans(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Knot span index and local parameter for each query time."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.start_time, self.end_time
        if np.any(t < lo - DOMAIN_EPS) or np.any(t > hi + DOMAIN_EPS):
            raise OutOfDomainError(
                f"t outside [{lo}, {hi}] (got range "
                f"[{t.min():.6f}, {t.max():.6f}])"
            )
        u = np.clip(t - self.start_time, 0.0, self.duration) / self.knot_interval
        span = np.clip(u.astype(int), 0, self.num_control_points - self.degree - 1)
        return span, u

    def evaluate(self, t):
        """Curve position at time t (scalar -> (3,), array -> (m, 3)).

        De Boor recursion on the uniform knot vector; the result lies in
        the convex hull of the k+1 active control points.
        """
        scalar = np.isscalar(t) or np.ndim(t) == 0
        span, u = self._spans(t)
        span = np.atleast_1d(span)
        u = np.atleast_1d(u) + self.degree  # knot units, u_i = i
        k = self.degree
        # Column c holds the point for global control index span + c.
        idx = span[:, None] + np.arange(k + 1)[None, :]
        d = self.control_points[idx].copy()  # (m, k+1, 3)
        for r in range(1, k + 1):
            for c in range(k, r - 1, -1):
                alpha = (u - (span + c)) / (k + 1 - r)
                d[:, c, :] = (1.0 - alpha[:, None]) * d[:, c - 1, :] + alpha[
                    :, None
                ] * d[:, c, :]
        out = d[:, k, :]
        return out[0] if scalar else out

    def active_control_points(self, t) -> np.ndarray:
        """The k+1 control points whose basis functions are live at time t."""
        span, _ = self._spans(t)
        j = int(np.atleast_1d(span)[0])
        return self.control_points[j : j + self.degree + 1]

    def derivative_spline(self, order: int = 1) -> "BSplineTrajectory":
        """Spline of degree k-order whose value is the order-th time derivative."""
        if order < 1:
            raise ValueError("order must be >= 1")
        if order > self.degree:
            raise OrderTooHighError(
                f"order {order} exceeds degree {self.degree}"
            )
        pts = self.control_points
        for _ in range(order):
            pts = np.diff(pts, axis=0) / self.knot_interval
        return BSplineTrajectory(
            pts, self.degree - order, self.knot_interval, self.start_time
        )

    def shifted(self, start_time: float) -> "BSplineTrajectory":
        return replace(self, start_time=start_time)


def derivative_control_points(traj: BSplineTrajectory, order: int) -> np.ndarray:
    """Differenced control points without constructing the spline (order >= 1)."""
    if order > traj.degree:
        raise OrderTooHighError(f"order {order} exceeds degree {traj.degree}")
    pts = traj.control_points
    for _ in range(order):
        pts = np.diff(pts, axis=0) / traj.knot_interval
    return pts


def default_knot_interval(start, goal, n_points: int, cruise_speed: float = 2.0) -> float:
    """Knot interval that traverses the segment at a nominal cruise speed.

    dt = length / (n_segments * cruise), so a uniform initialization moves
    one control spacing per knot at cruise_speed.
    """
    if n_points < 2:
        raise TooFewPointsError("need at least two control points")
    if cruise_speed <= 0:
        raise ValueError("cruise_speed must be positive")
    length = float(np.linalg.norm(np.asarray(goal, float) - np.asarray(start, float)))
    return max(length / ((n_points - 1) * cruise_speed), 1e-3)


def init_straight_line(
    start,
    goal,
    n_points: int,
    dt: float,
    degree: int = DEFAULT_DEGREE,
    start_time: float = 0.0,
) -> BSplineTrajectory:
    """Straight-line seed: control points on the segment, endpoints clamped.

    The base grid is a uniform interpolation of start -> goal; the first
    `degree` points are then pinned to start and the last `degree` to goal
    so the curve begins and ends exactly at them (with zero end velocity).
    """
    if n_points < degree + 1:
        raise TooFewPointsError(
            f"n_points must be >= {degree + 1} for degree {degree}, got {n_points}"
        )
    a = np.asarray(start, dtype=float).reshape(3)
    b = np.asarray(goal, dtype=float).reshape(3)
    alphas = np.linspace(0.0, 1.0, n_points)[:, None]
    pts = (1.0 - alphas) * a + alphas * b
    pts[:degree] = a
    pts[-degree:] = b
    return BSplineTrajectory(pts, degree, dt, start_time)
