"""Gradient-based trajectory refinement over free B-spline control points.

Minimizes J = ls * J_smooth + lc * J_collision + ld * J_feasible where

* J_smooth   = sum of squared jerk control points (third differences / dt^3),
* J_collision = sum over free control points of F(d(p)) with the cubic
  barrier F(d) = (d_safe - d)^3 below d_safe and 0 above (C1 at the kink;
  the gradient uses the one-sided derivative -3 (d_safe - d)^2, which is 0
  exactly at d = d_safe),
* J_feasible = sum of max(0, |v|^2 - v_max^2)^2 + max(0, |a|^2 - a_max^2)^2
  over velocity and acceleration control points.

All gradients are analytic.  The solver is plain gradient descent with
Armijo backtracking; the first and last `n_boundary` control points stay
pinned so the curve keeps its endpoint state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bspline import BSplineTrajectory, derivative_control_points
from .mapping import OccupancyMap

MIN_STEP = 1e-14


class DegreeTooLowError(ValueError):
    """Cost term needs a higher-degree spline than was supplied."""


@dataclass(frozen=True)
class CostWeights:
    lambda_s: float = 1.0
    lambda_c: float = 10.0
    lambda_d: float = 1.0
    d_safe: float = 0.5  # meters
    v_max: float = 4.0  # m/s
    a_max: float = 3.0  # m/s^2

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_c, self.lambda_d) < 0:
            raise ValueError("weights must be non-negative")
        if self.d_safe <= 0 or self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("d_safe, v_max, a_max must be positive")


@dataclass(frozen=True)
class OptimizeOptions:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    step_shrink: float = 0.5
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValueError("step_shrink must be in (0, 1)")
        if not (0.0 < self.armijo_c < 1.0):
            raise ValueError("armijo_c must be in (0, 1)")


@dataclass(frozen=True)
class CostReport:
    total: float
    smoothness: float
    collision: float
    feasibility: float
    gradient: np.ndarray  # flat, over free control points


@dataclass(frozen=True)
class OptimizeResult:
    trajectory: BSplineTrajectory
    iterations: int
    report: CostReport
    no_descent: bool = False
    trace: tuple = ()  # rows of (iteration, J, Js, Jc, Jd, step)


def cost_smoothness(traj: BSplineTrajectory) -> tuple[float, np.ndarray]:
    """Sum of squared jerk control points, with gradient over all control points."""
    if traj.degree < 3:
        raise DegreeTooLowError("smoothness needs a spline of degree >= 3")
    jerk = derivative_control_points(traj, 3)  # (m, 3)
    value = float((jerk * jerk).sum())
    grad = np.zeros_like(traj.control_points)
    c = 2.0 * jerk / traj.knot_interval**3
    m = jerk.shape[0]
    grad[0:m] += -c
    grad[1 : m + 1] += 3.0 * c
    grad[2 : m + 2] += -3.0 * c
    grad[3 : m + 3] += c
    return value, grad


def cost_collision(
    traj: BSplineTrajectory,
    grid: OccupancyMap,
    d_safe: float,
    n_boundary: int | None = None,
) -> tuple[float, np.ndarray]:
    """Cubic-barrier clearance penalty over free (non-pinned) control points."""
    nb = traj.degree if n_boundary is None else n_boundary
    pts = traj.control_points
    grad = np.zeros_like(pts)
    free = pts[nb : pts.shape[0] - nb]
    if free.shape[0] == 0 or grid is None:
        return 0.0, grad
    d, d_grad, _ = grid.query_distance_batch(free)
    gap = d_safe - d
    active = gap > 0.0
    value = float((gap[active] ** 3).sum())
    coeff = np.where(active, -3.0 * gap**2, 0.0)
    grad[nb : pts.shape[0] - nb] = coeff[:, None] * d_grad
    return value, grad


def cost_feasibility(
    traj: BSplineTrajectory, v_max: float, a_max: float
) -> tuple[float, np.ndarray]:
    """Quartic penalty on velocity/acceleration control points beyond the limits."""
    if traj.degree < 2:
        raise DegreeTooLowError("feasibility needs a spline of degree >= 2")
    dt = traj.knot_interval
    grad = np.zeros_like(traj.control_points)
    value = 0.0

    v = derivative_control_points(traj, 1)
    ev = (v * v).sum(axis=1) - v_max**2
    act = ev > 0.0
    if act.any():
        value += float((ev[act] ** 2).sum())
        c = np.where(act, 4.0 * ev, 0.0)[:, None] * v / dt
        m = v.shape[0]
        grad[0:m] += -c
        grad[1 : m + 1] += c

    a = derivative_control_points(traj, 2)
    ea = (a * a).sum(axis=1) - a_max**2
    act = ea > 0.0
    if act.any():
        value += float((ea[act] ** 2).sum())
        c = np.where(act, 4.0 * ea, 0.0)[:, None] * a / dt**2
        m = a.shape[0]
        grad[0:m] += c
        grad[1 : m + 1] += -2.0 * c
        grad[2 : m + 2] += c

    return value, grad


def total_cost(
    traj: BSplineTrajectory,
    weights: CostWeights,
    grid: OccupancyMap,
    n_boundary: int | None = None,
) -> CostReport:
    """Weighted sum of the three terms; gradient flattened over free points."""
    nb = traj.degree if n_boundary is None else n_boundary
    js, gs = cost_smoothness(traj)
    jc, gc = cost_collision(traj, grid, weights.d_safe, nb)
    jd, gd = cost_feasibility(traj, weights.v_max, weights.a_max)
    grad = weights.lambda_s * gs + weights.lambda_c * gc + weights.lambda_d * gd
    grad[:nb] = 0.0
    grad[grad.shape[0] - nb :] = 0.0
    total = weights.lambda_s * js + weights.lambda_c * jc + weights.lambda_d * jd
    return CostReport(total, js, jc, jd, grad[nb : grad.shape[0] - nb].ravel().copy())


def optimize(
    traj: BSplineTrajectory,
    weights: CostWeights,
    grid: OccupancyMap,
    options: OptimizeOptions = OptimizeOptions(),
    warm_start: bool = True,
    n_boundary: int | None = None,
) -> OptimizeResult:
    """Armijo-backtracked gradient descent over the free control points.

    The accepted-cost sequence is non-increasing; boundary control points are
    returned bit-identical.  warm_start=False discards the interior of the
    input and re-seeds it on the straight line between the pinned ends.
    """
    nb = traj.degree if n_boundary is None else n_boundary
    n = traj.num_control_points
    head = traj.control_points[:nb]
    tail = traj.control_points[n - nb :]
    free0 = traj.control_points[nb : n - nb]

    if not warm_start and free0.shape[0] > 0:
        alphas = np.linspace(0.0, 1.0, free0.shape[0] + 2)[1:-1, None]
        free0 = (1.0 - alphas) * head[-1] + alphas * tail[0]

    def build(free_flat: np.ndarray) -> BSplineTrajectory:
        pts = np.vstack([head, free_flat.reshape(-1, 3), tail])
        return replace(traj, control_points=pts)

    x = free0.ravel().copy()
    current = build(x)
    report = total_cost(current, weights, grid, nb)
    trace = []

    if x.size == 0 or report.total == 0.0:
        return OptimizeResult(current, 0, report, False, tuple(trace))

    iterations = 0
    no_descent = False
    alpha_init = 1.0
    stalled = 0
    for _ in range(options.max_iterations):
        g = report.gradient
        if np.abs(g).max() <= options.gradient_tolerance:
            break
        direction = -g
        slope = -float(g @ g)
        alpha = alpha_init
        accepted = None
        while alpha >= MIN_STEP:
            candidate = build(x + alpha * direction)
            cand_report = total_cost(candidate, weights, grid, nb)
            if cand_report.total <= report.total + options.armijo_c * alpha * slope:
                accepted = (candidate, cand_report, alpha)
                break
            alpha *= options.step_shrink
        if accepted is None:
            no_descent = iterations == 0
            break
        current, cand_report, alpha = accepted
        if report.total - cand_report.total <= 1e-12 * max(1.0, report.total):
            stalled += 1
        else:
            stalled = 0
        x_new = x + alpha * direction
        # Barzilai-Borwein seed for the next line search: a fixed unit trial
        # step needs ~15 backtracks per iteration on the stiff jerk term.
        s = x_new - x
        y = cand_report.gradient - g
        sy = float(s @ y)
        if sy > 1e-16:
            alpha_init = min(max(float(s @ s) / sy, 1e-6), 1e3)
        else:
            alpha_init = max(alpha, 1e-6) * 2.0
        x, report = x_new, cand_report
        iterations += 1
        trace.append(
            (
                iterations,
                report.total,
                report.smoothness,
                report.collision,
                report.feasibility,
                alpha,
            )
        )
        if stalled >= 3:
            break

    if no_descent:
        # Nothing improved on the input; hand it back untouched.
        current = build(free0.ravel())
        report = total_cost(current, weights, grid, nb)
    return OptimizeResult(current, iterations, report, no_descent, tuple(trace))


def write_trace_csv(trace, path) -> int:
    """Dump per-iteration rows as iteration,J,Js,Jc,Jd,step; returns row count."""
    with open(path, "w") as fh:
        fh.write("iteration,J,Js,Jc,Jd,step\n")
        for row in trace:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
    return len(trace)
