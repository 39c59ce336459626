import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import sweepmp as sm
from sweepmp.examples import rho

RNG = np.random.default_rng(1234)


def fd_consistency(constraint, t, x, step=1e-5, rtol=1e-4):
    """Central-difference check of every supplied derivative of psi."""
    e = constraint.eval(t, x)
    n = x.size
    for i in range(n):
        d = np.zeros(n)
        d[i] = step
        fd = (constraint.eval(t, x + d).value
              - constraint.eval(t, x - d).value) / (2 * step)
        assert abs(fd - e.grad_x[i]) <= rtol * (1.0 + abs(e.grad_x[i]))
        fd_g = (constraint.eval(t, x + d).grad_x
                - constraint.eval(t, x - d).grad_x) / (2 * step)
        assert np.allclose(fd_g, e.hess_x[:, i],
                           atol=rtol * (1.0 + np.abs(e.hess_x[:, i]).max()))
    fd_t = (constraint.eval(t + step, x).value
            - constraint.eval(t - step, x).value) / (2 * step)
    assert abs(fd_t - e.dt) <= rtol * (1.0 + abs(e.dt))
    fd_tg = (constraint.eval(t + step, x).grad_x
             - constraint.eval(t - step, x).grad_x) / (2 * step)
    assert np.allclose(fd_tg, e.dt_grad, atol=rtol * (1.0 + np.abs(e.dt_grad).max()))


def test_constraint_derivatives_consistent(ex1_problem):
    for _ in range(100):
        t = RNG.uniform(0.0, ex1_problem.horizon)
        x = RNG.uniform(-2.0, 2.0, size=2)
        fd_consistency(ex1_problem.constraint, t, x)


def test_static_disc_derivatives_consistent():
    p = sm.build_static_disc()
    for _ in range(100):
        x = RNG.uniform(-2.0, 2.0, size=2)
        fd_consistency(p.constraint, RNG.uniform(0.0, 1.5), x)


def test_validate_example1_constants(ex1_report):
    # band-gradient oracle: minimise 2*sqrt(rho(t)^2 - beta') over t and the
    # band depth beta' in [0, beta]; the minimum sits at beta' = beta and the
    # radius vertex
    beta = 0.01
    oracle = min(2.0 * math.sqrt(rho(t) ** 2 - b)
                 for t in np.linspace(0.0, 0.589, 20001)
                 for b in (0.0, beta))
    assert abs(ex1_report.eta - oracle) <= 2e-3
    assert abs(ex1_report.eta - 0.458) <= 1e-3
    assert ex1_report.M == pytest.approx(1.0, abs=1e-9)
    assert math.isfinite(ex1_report.mu) and ex1_report.mu > 1.0
    assert ex1_report.ok
    assert ex1_report.checks["c0_inside_C0"]
    assert ex1_report.checks["ct_inside_CT"]


def test_validate_deterministic(ex1_problem):
    grid = sm.ProbeGrid(n_t=16, n_x=16)
    a = sm.validate_assumptions(ex1_problem, grid)
    b = sm.validate_assumptions(ex1_problem, grid)
    assert a.eta == b.eta and a.mu == b.mu and a.M == b.M


def test_validate_static_disc():
    p = sm.build_static_disc()
    rep = sm.validate_assumptions(p, sm.ProbeGrid(n_t=12, n_x=32), beta=0.01)
    assert rep.ok
    assert rep.M == pytest.approx(1.0, abs=1e-9)
    assert rep.eta == pytest.approx(2.0 * math.sqrt(1.0 - 0.01), abs=2e-3)


def _quartic_problem():
    def quartic(t, x):
        v = float(x[0] ** 4 - x[0] ** 2)
        return (v, np.array([4 * x[0] ** 3 - 2 * x[0]]),
                np.array([[12 * x[0] ** 2 - 2.0]]), 0.0, np.array([0.0]))

    return sm.ProblemSpec(
        f=lambda t, x, u: (np.array([u[0]]), np.zeros((1, 1))),
        controls=sm.BoxControls([-1.0], [1.0]),
        constraint=sm.CallableConstraint(quartic),
        c0=sm.PointSet(np.array([0.0])),
        ct=sm.BallSet(np.array([0.0]), 0.5),
        phi=lambda x: (-float(x[0]), np.array([-1.0])),
        horizon=1.0, name="quartic")


def test_interior_critical_point_fails_band_check():
    # grad psi vanishes at |x| = 1/sqrt(2) where psi = -1/4 >= -0.3
    with pytest.raises(sm.AssumptionError, match="band"):
        sm.validate_assumptions(_quartic_problem(),
                                sm.ProbeGrid(n_t=12, n_x=64), beta=0.3)


def test_empty_control_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        sm.FiniteControls(())


def test_probe_grid_minimum_density():
    with pytest.raises(ValueError, match="10 samples"):
        sm.ProbeGrid(n_t=5, n_x=64)


def test_boundary_multiplier_contact_value(ex1_problem):
    x = np.array([0.25, math.sqrt(3.0) / 4.0])
    xi = sm.boundary_multiplier(ex1_problem, 0.25, x, np.array([1.0]))
    assert xi == pytest.approx(2.5, abs=1e-12)


def test_boundary_multiplier_interior_zero(ex1_problem):
    x = np.array([0.0, math.sqrt(3.0) / 4.0])
    assert sm.boundary_multiplier(ex1_problem, 0.0, x, np.array([1.0])) == 0.0


def test_boundary_multiplier_clipped_at_zero():
    # static disc, boundary point, inward-pointing velocity: multiplier 0
    p = sm.build_static_disc()
    xi = sm.boundary_multiplier(p, 0.0, np.array([1.0, 0.0]), np.array([-1.0]))
    assert xi == 0.0


def test_boundary_multiplier_outside_raises(ex1_problem):
    with pytest.raises(ValueError, match="outside"):
        sm.boundary_multiplier(ex1_problem, 0.0, np.array([3.0, 0.0]),
                               np.array([1.0]))


def test_boundary_multiplier_capped(ex1_problem, ex1_report):
    # the multiplier on the boundary never exceeds mu / eta^2
    cap = ex1_report.star + 1e-9
    for _ in range(200):
        t = RNG.uniform(0.0, ex1_problem.horizon)
        ang = RNG.uniform(0.0, 2.0 * math.pi)
        r = rho(t)
        x = r * np.array([math.cos(ang), math.sin(ang)])
        u = np.array([RNG.choice([-0.05, 1.0])])
        xi = sm.boundary_multiplier(ex1_problem, t, x, u)
        assert 0.0 <= xi <= cap


def test_simple_set_normal_cones():
    pt = sm.PointSet(np.array([1.0, 2.0]))
    assert pt.normal_cone_distance(np.array([5.0, -3.0]), pt.point) == 0.0

    ball = sm.BallSet(np.array([0.0, 0.0]), 1.0)
    inside = np.array([0.2, 0.1])
    v = np.array([0.3, -0.4])
    assert ball.normal_cone_distance(v, inside) == pytest.approx(0.5)
    boundary = np.array([1.0, 0.0])
    assert ball.normal_cone_distance(np.array([2.0, 0.0]), boundary) == 0.0
    assert ball.normal_cone_distance(np.array([-2.0, 0.0]),
                                     boundary) == pytest.approx(2.0)
    assert ball.normal_cone_distance(np.array([1.0, 1.0]),
                                     boundary) == pytest.approx(1.0)

    box = sm.BoxSet(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert box.normal_cone_distance(np.array([0.5, 0.0]),
                                    np.array([1.0, 0.5])) == 0.0
    assert box.normal_cone_distance(np.array([-0.5, 0.0]),
                                    np.array([1.0, 0.5])) == pytest.approx(0.5)
    assert box.normal_cone_distance(np.array([0.3, 0.4]),
                                    np.array([0.5, 0.5])) == pytest.approx(0.5)


@given(st.floats(-0.04, 0.04), st.floats(-0.04, 0.04))
def test_ball_membership_tolerance(dx, dy):
    ball = sm.BallSet(np.array([0.0, 0.0]), 1.0)
    x = np.array([1.0 + dx, dy])
    inside = np.linalg.norm(x) <= 1.0 + 1e-9
    assert ball.contains(x) == inside


def test_bad_simple_sets_rejected():
    with pytest.raises(ValueError):
        sm.BallSet(np.array([0.0]), 0.0)
    with pytest.raises(ValueError):
        sm.BoxSet(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        sm.BoxControls([2.0], [1.0])
