"""Uniform B-spline tests against an independent Cox-de Boor oracle.

The oracle below evaluates the curve as sum_i P_i * B_{i,k}(u) with the
textbook basis-function recursion over the same unclamped uniform knot
vector (u_i = i * dt, domain [u_k, u_{n+1}]).  It shares no code with the
package's De Boor implementation.
"""

import numpy as np
import pytest

from vlnav.bspline import (
    BSplineTrajectory,
    OrderTooHighError,
    OutOfDomainError,
    TooFewPointsError,
    default_knot_interval,
    init_straight_line,
)


def basis(i: int, k: int, u: float, knots: np.ndarray) -> float:
    """Cox-de Boor recursion, 0/0 := 0."""
    if k == 0:
        return 1.0 if knots[i] <= u < knots[i + 1] else 0.0
    left = 0.0
    den = knots[i + k] - knots[i]
    if den > 0:
        left = (u - knots[i]) / den * basis(i, k - 1, u, knots)
    right = 0.0
    den = knots[i + k + 1] - knots[i + 1]
    if den > 0:
        right = (knots[i + k + 1] - u) / den * basis(i + 1, k - 1, u, knots)
    return left + right


def oracle_evaluate(ctrl: np.ndarray, degree: int, dt: float, t: float, start: float = 0.0):
    n1 = ctrl.shape[0]
    knots = np.arange(n1 + degree + 1) * dt
    u = (t - start) + degree * dt
    u = min(u, knots[n1] - 1e-12)  # half-open basis support at the domain end
    return sum(ctrl[i] * basis(i, degree, u, knots) for i in range(n1))


class TestEvaluate:
    def test_partition_of_unity_constant_points(self):
        ctrl = np.tile([2.0, -1.0, 0.5], (7, 1))
        tr = BSplineTrajectory(ctrl, 3, 0.4)
        for t in np.linspace(0.0, tr.duration, 17):
            np.testing.assert_allclose(tr.evaluate(t), [2.0, -1.0, 0.5], atol=1e-12)

    def test_linear_precision_constant_speed(self):
        # Collinear equally spaced control points: the curve is that line
        # traversed at constant parametric speed spacing/dt.
        ctrl = np.outer(np.arange(9), [0.7, 0.0, 0.0])
        tr = BSplineTrajectory(ctrl, 3, 0.35)
        ts = np.linspace(0.0, tr.duration, 33)
        pts = tr.evaluate(ts)
        assert np.abs(pts[:, 1:]).max() < 1e-12
        speeds = np.diff(pts[:, 0]) / np.diff(ts)
        np.testing.assert_allclose(speeds, 0.7 / 0.35, atol=1e-9)

    def test_matches_independent_oracle_at_knots(self):
        # Frozen from the oracle: start = (P0+4P1+P2)/6 = 1, end = (P1+4P2+P3)/6 = 13/6.
        ctrl = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [4, 0, 0]], dtype=float)
        tr = BSplineTrajectory(ctrl, 3, 1.0)
        np.testing.assert_allclose(tr.evaluate(0.0)[0], 1.0, atol=1e-12)
        np.testing.assert_allclose(tr.evaluate(tr.duration)[0], 13.0 / 6.0, atol=1e-12)
        np.testing.assert_allclose(
            tr.evaluate(0.0), oracle_evaluate(ctrl, 3, 1.0, 0.0), atol=1e-9
        )

    def test_matches_oracle_on_random_splines(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            n = int(rng.integers(4, 12))
            degree = int(rng.integers(1, 4))
            n = max(n, degree + 1)
            ctrl = rng.normal(size=(n, 3))
            dt = float(rng.uniform(0.1, 2.0))
            start = float(rng.uniform(-3.0, 3.0))
            tr = BSplineTrajectory(ctrl, degree, dt, start)
            for t in rng.uniform(start, start + tr.duration, 6):
                np.testing.assert_allclose(
                    tr.evaluate(float(t)),
                    oracle_evaluate(ctrl, degree, dt, float(t), start),
                    atol=1e-9,
                )

    def test_out_of_domain_rejected(self):
        tr = BSplineTrajectory(np.zeros((5, 3)), 3, 0.5)
        with pytest.raises(OutOfDomainError):
            tr.evaluate(-0.1)
        with pytest.raises(OutOfDomainError):
            tr.evaluate(tr.duration + 0.1)

    def test_linearity_in_control_points(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(8, 3))
        b = rng.normal(size=(8, 3))
        ts = np.linspace(0.0, (8 - 3) * 0.5, 11)
        ya = BSplineTrajectory(a, 3, 0.5).evaluate(ts)
        yb = BSplineTrajectory(b, 3, 0.5).evaluate(ts)
        yab = BSplineTrajectory(a + b, 3, 0.5).evaluate(ts)
        np.testing.assert_allclose(yab, ya + yb, atol=1e-12)

    def test_convex_hull_of_active_points(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            n = int(rng.integers(4, 14))
            ctrl = rng.uniform(-10, 10, size=(n, 3))
            tr = BSplineTrajectory(ctrl, 3, float(rng.uniform(0.2, 1.5)))
            for t in rng.uniform(0.0, tr.duration, 10):
                active = tr.active_control_points(float(t))
                p = tr.evaluate(float(t))
                assert (p >= active.min(axis=0) - 1e-9).all()
                assert (p <= active.max(axis=0) + 1e-9).all()


class TestDerivativeSpline:
    def test_constant_points_zero_derivative(self):
        tr = BSplineTrajectory(np.tile([1.0, 2.0, 3.0], (6, 1)), 3, 0.5)
        d = tr.derivative_spline(1)
        assert np.abs(d.control_points).max() == 0.0
        assert d.degree == 2

    def test_first_difference_example(self):
        # V_0 = (P_1 - P_0)/dt = (2,0,0)/0.5 = (4,0,0)
        tr = BSplineTrajectory(np.array([[0, 0, 0], [2.0, 0, 0]]), 1, 0.5)
        np.testing.assert_allclose(tr.derivative_spline(1).control_points, [[4.0, 0, 0]])

    def test_third_difference_example(self):
        # (P3 - 3 P2 + 3 P1 - P0)/dt^3 = (1,0,0)
        ctrl = np.array([[0, 0, 0], [0, 0, 0], [0, 0, 0], [1.0, 0, 0]])
        tr = BSplineTrajectory(ctrl, 3, 1.0)
        jerk = tr.derivative_spline(3)
        assert jerk.degree == 0
        np.testing.assert_allclose(jerk.control_points, [[1.0, 0.0, 0.0]])

    def test_order_too_high_rejected(self):
        tr = BSplineTrajectory(np.zeros((6, 3)), 3, 0.5)
        with pytest.raises(OrderTooHighError):
            tr.derivative_spline(4)

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        tr = BSplineTrajectory(rng.normal(size=(10, 3)), 3, 0.6)
        vel = tr.derivative_spline(1)
        eps = 1e-5
        for t in np.linspace(2 * eps, tr.duration - 2 * eps, 9):
            fd = (tr.evaluate(t + eps) - tr.evaluate(t - eps)) / (2 * eps)
            v = vel.evaluate(t)
            assert np.linalg.norm(v - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-5

    def test_second_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        tr = BSplineTrajectory(rng.normal(size=(9, 3)), 3, 0.5)
        acc = tr.derivative_spline(2)
        eps = 1e-4
        for t in np.linspace(2 * eps, tr.duration - 2 * eps, 7):
            fd = (
                tr.evaluate(t + eps) - 2 * tr.evaluate(t) + tr.evaluate(t - eps)
            ) / eps**2
            a = acc.evaluate(t)
            assert np.linalg.norm(a - fd) / max(np.linalg.norm(fd), 1e-6) < 1e-4

    def test_domain_preserved(self):
        tr = BSplineTrajectory(np.random.default_rng(0).normal(size=(8, 3)), 3, 0.7, 2.5)
        d = tr.derivative_spline(2)
        assert d.start_time == tr.start_time
        assert d.duration == pytest.approx(tr.duration)


class TestInitStraightLine:
    def test_degenerate_segment_stays_put(self):
        tr = init_straight_line([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 8, 0.5)
        for t in np.linspace(0.0, tr.duration, 9):
            np.testing.assert_allclose(tr.evaluate(t), [1.0, 2.0, 3.0], atol=1e-12)

    def test_uniform_grid_with_clamped_ends(self):
        tr = init_straight_line([0.0, 0.0, 0.0], [10.0, 0.0, 0.0], 11, 0.5)
        xs = tr.control_points[:, 0]
        # interior keeps the uniform 0..10 grid; ends clamp to start/goal
        np.testing.assert_allclose(xs, [0, 0, 0, 3, 4, 5, 6, 7, 10, 10, 10])
        np.testing.assert_allclose(tr.evaluate(0.0), [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(tr.evaluate(tr.duration), [10, 0, 0], atol=1e-12)

    def test_too_few_points_rejected(self):
        with pytest.raises(TooFewPointsError):
            init_straight_line([0, 0, 0], [1, 0, 0], 3, 0.5)


def test_invariants_rejected_at_construction():
    with pytest.raises(TooFewPointsError):
        BSplineTrajectory(np.zeros((3, 3)), 3, 0.5)
    with pytest.raises(ValueError):
        BSplineTrajectory(np.zeros((5, 3)), 3, 0.0)
    with pytest.raises(ValueError):
        BSplineTrajectory(np.full((5, 3), np.nan), 3, 0.5)


def test_duration_formula():
    tr = BSplineTrajectory(np.zeros((9, 3)), 3, 0.25)
    assert tr.duration == pytest.approx((9 - 3) * 0.25)


def test_default_knot_interval_rule():
    # 10 m over 10 segments at 2 m/s -> dt = 0.5 s
    assert default_knot_interval([0, 0, 0], [10, 0, 0], 11) == pytest.approx(0.5)
    with pytest.raises(TooFewPointsError):
        default_knot_interval([0, 0, 0], [10, 0, 0], 1)
