import math

import numpy as np
import pytest

import sweepmp as sm
from sweepmp.examples import phi_boundary


def test_control_signal_validation():
    with pytest.raises(ValueError, match="start at 0"):
        sm.ControlSignal(np.array([0.1, 1.0]), np.array([[1.0]]))
    with pytest.raises(ValueError, match="increasing"):
        sm.ControlSignal(np.array([0.0, 0.5, 0.5]), np.array([[1.0], [0.0]]))
    u = sm.ControlSignal.bang_bang(1.0, -0.05, 0.5, 1.0)
    assert u.value_at(0.2) == pytest.approx(1.0)
    assert u.value_at(0.5) == pytest.approx(-0.05)
    assert u.value_at(1.0) == pytest.approx(-0.05)


def test_control_outside_set_rejected(ex1_problem):
    u = sm.ControlSignal.constant(2.0, ex1_problem.horizon)  # beyond the box
    with pytest.raises(ValueError, match="outside the control set"):
        sm.integrate_forward(ex1_problem, u, 100.0, 0.01,
                             np.array([0.0, 0.4]), 1e-8)


def test_interior_phase_matches_straight_line(ex1_problem, ex1_x0):
    u = sm.ControlSignal.constant(1.0, ex1_problem.horizon)
    traj = sm.integrate_forward(ex1_problem, u, 800.0, 2.0 ** -8, ex1_x0,
                                1e-8, t_end=0.24)
    expect = np.column_stack([traj.grid, np.full(traj.grid.size, ex1_x0[1])])
    assert np.max(np.abs(traj.states - expect)) <= 1e-3


def test_zero_velocity_deep_interior_is_constant():
    p = sm.build_static_disc()
    u = sm.ControlSignal.constant(0.0, p.horizon)
    x0 = np.array([0.1, -0.2])  # psi < -beta for all t
    traj = sm.integrate_forward(p, u, 200.0, 0.05, x0, 1e-10)
    assert np.max(np.abs(traj.states - x0)) <= 1e-9


def test_boundary_arc_angle_matches_closed_form(ex1_problem, ex1_params,
                                                ex1_x0):
    u = sm.ControlSignal.constant(1.0, ex1_problem.horizon)
    t_hi = ex1_params.tstar - 0.01
    traj = sm.integrate_forward(ex1_problem, u, 3000.0, 2e-3, ex1_x0, 1e-8,
                                t_end=t_hi)
    mask = traj.grid >= 0.26
    angles = np.arctan2(traj.states[mask, 1], traj.states[mask, 0])
    ref = np.array([phi_boundary(t) for t in traj.grid[mask]])
    assert np.max(np.abs(angles - ref)) <= 5e-3


def test_grid_contains_control_breakpoints(ex1_problem, ex1_ucontrol, ex1_x0,
                                           ex1_params):
    traj = sm.integrate_forward(ex1_problem, ex1_ucontrol, 300.0, 0.02,
                                ex1_x0, 1e-8)
    assert np.any(np.isclose(traj.grid, ex1_params.t2, atol=1e-12))
    assert traj.grid[0] == 0.0
    assert traj.grid[-1] == pytest.approx(ex1_problem.horizon, abs=1e-12)


def test_deterministic_bitwise(ex1_problem, ex1_ucontrol, ex1_x0):
    a = sm.integrate_forward(ex1_problem, ex1_ucontrol, 500.0, 0.01, ex1_x0,
                             1e-8)
    b = sm.integrate_forward(ex1_problem, ex1_ucontrol, 500.0, 0.01, ex1_x0,
                             1e-8)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.grid, b.grid)
    assert np.array_equal(a.xi, b.xi)


def test_speed_bound_invariant(ex1_problem, ex1_report, ex1_schedule,
                               ex1_ucontrol, ex1_x0):
    k = 3
    traj = sm.integrate_forward(ex1_problem, ex1_ucontrol,
                                ex1_schedule.gammas[k], ex1_schedule.sigmas[k],
                                ex1_x0, 1e-8, mu_k=ex1_schedule.mus[k])
    cap = ex1_report.M + ex1_report.star * ex1_report.grad_max
    steps = np.linalg.norm(np.diff(traj.states, axis=0), axis=1)
    assert np.all(steps <= cap * np.diff(traj.grid) * (1.0 + 1e-9))


def test_start_outside_inflated_set_rejected(ex1_problem):
    with pytest.raises(ValueError, match="inflated start set"):
        sm.integrate_forward(ex1_problem,
                             sm.ControlSignal.constant(1.0, ex1_problem.horizon),
                             200.0, 0.01, np.array([2.0, 2.0]), 1e-8,
                             mu_k=sm.mu_gamma(200.0, 15.5, 0.458))


def test_far_outside_start_overflows(ex1_problem):
    u = sm.ControlSignal.constant(1.0, ex1_problem.horizon)
    with pytest.raises(OverflowError):
        sm.integrate_forward(ex1_problem, u, 1e4, 0.01,
                             np.array([40.0, 0.0]), 1e-8)


def test_family_static_disc_agrees_before_contact():
    p = sm.build_static_disc()
    u = sm.ControlSignal.constant(1.0, p.horizon)
    x0 = np.zeros(2)
    rep = sm.validate_assumptions(p, sm.ProbeGrid(n_t=12, n_x=24))
    sched = sm.PenaltySchedule.default(rep.mu, rep.eta, k=6)
    traj = sm.integrate_forward(p, u, sched.gammas[5], sched.sigmas[5], x0,
                                1e-9, mu_k=sched.mus[5])
    oracle = sm.catchup_simulate(p, u, x0, 4000)
    ts = np.linspace(0.0, 0.95, 500)   # strictly before contact at t = 1
    gap = np.max(np.linalg.norm(traj.interp_states(ts)
                                - oracle.interp_states(ts), axis=1))
    assert gap <= 1e-3


def test_family_untouched_boundary_gap_is_tiny():
    p = sm.build_static_disc()
    u = sm.ControlSignal.constant(0.0, p.horizon)   # rest at the origin
    rep = sm.validate_assumptions(p, sm.ProbeGrid(n_t=12, n_x=24))
    sched = sm.PenaltySchedule.default(rep.mu, rep.eta, k=3)
    tol = 1e-8
    fam = sm.run_family(p, u, sched, np.zeros(2), tol=tol, oracle_steps=500)
    assert all(g <= tol * 10 for g in fam.sup_gaps)


def test_family_reports_and_monotone(ex1_problem, ex1_schedule, ex1_ucontrol,
                                     ex1_x0):
    fam = sm.run_family(ex1_problem, ex1_ucontrol, ex1_schedule, ex1_x0,
                        ks=[1, 2, 3], oracle_steps=2000)
    assert fam.monotone
    assert not fam.failures
    assert all(math.isfinite(g) for g in fam.sup_gaps)
    d = fam.to_dict()
    assert d["ks"] == [1, 2, 3] and d["oracle_steps"] == 2000


def test_contraction_of_nearby_starts(ex1_problem, ex1_report, ex1_schedule,
                                      ex1_ucontrol, ex1_x0):
    gamma, sigma = ex1_schedule.gammas[3], ex1_schedule.sigmas[3]
    delta = 1e-6
    a = sm.integrate_forward(ex1_problem, ex1_ucontrol, gamma, sigma, ex1_x0,
                             1e-10)
    b = sm.integrate_forward(ex1_problem, ex1_ucontrol, gamma, sigma,
                             ex1_x0 + np.array([0.0, delta]), 1e-10)
    ts = np.linspace(0.0, ex1_problem.horizon, 501)
    gap = np.linalg.norm(a.interp_states(ts) - b.interp_states(ts), axis=1)
    cap = 2.0 * (ex1_report.M + ex1_report.star * ex1_report.hess_max)
    assert np.all(gap <= np.exp(cap * ts) * delta * 1.001)


def test_trajectory_csv_roundtrip(tmp_path, ex1_traj_k3):
    path = tmp_path / "traj.csv"
    ex1_traj_k3.write_csv(path)
    back = sm.read_trajectory_csv(path)
    assert np.allclose(back.states, ex1_traj_k3.states, rtol=0, atol=0)
    assert np.allclose(back.xi, ex1_traj_k3.xi, rtol=0, atol=0)
