import math

import numpy as np
import pytest

import sweepmp as sm
from sweepmp.mpcheck import (adjoint_identity_residual, assemble_report,
                             make_candidate_arc, maximization_residual,
                             normalize_candidate, transversality_residual)


@pytest.fixture(scope="module")
def oracle_small(ex1_problem, ex1_ucontrol, ex1_x0):
    return sm.catchup_simulate(ex1_problem, ex1_ucontrol, ex1_x0, 2000)


def certificate(traj, lam=1.0):
    xT, yT = traj.terminal_state
    return make_candidate_arc(traj, np.array([0.0, -yT / xT]), lam)


def test_maximization_zero_for_aligned_costate(ex1_problem, oracle_small):
    # p1 > 0 everywhere and u_hat = 1 on [0, t2]: no residual there; make
    # the control constant so the whole run is aligned
    u = sm.ControlSignal.constant(1.0, ex1_problem.horizon)
    traj = sm.catchup_simulate(ex1_problem, u, np.array([0.0, 0.433]), 500)
    arc = make_candidate_arc(traj, np.array([0.8, 0.0]), 0.2)
    assert maximization_residual(ex1_problem, traj, arc) == 0.0


def test_maximization_detects_wrong_control(ex1_problem):
    u = sm.ControlSignal.constant(-0.05, ex1_problem.horizon)  # u_hat = -mu
    traj = sm.catchup_simulate(ex1_problem, u, np.array([0.0, 0.433]), 500)
    arc = make_candidate_arc(traj, np.array([0.8, 0.0]), 0.2)
    res = maximization_residual(ex1_problem, traj, arc)
    assert res == pytest.approx(0.8 * 1.05, rel=1e-12)  # p1*(1 - (-mu))


def test_maximization_negative_costate_wants_lower_bound(ex1_problem):
    u = sm.ControlSignal.constant(-0.05, ex1_problem.horizon)
    traj = sm.catchup_simulate(ex1_problem, u, np.array([0.0, 0.433]), 500)
    arc = make_candidate_arc(traj, np.array([-0.8, 0.0]), 0.2)
    assert maximization_residual(ex1_problem, traj, arc) == 0.0


def test_maximization_zero_costate_degenerate(ex1_problem, oracle_small):
    arc = make_candidate_arc(oracle_small, np.zeros(2), 1.0)
    assert maximization_residual(ex1_problem, oracle_small, arc) == 0.0


def test_maximization_empty_samples(ex1_problem, oracle_small):
    arc = certificate(oracle_small)
    with pytest.raises(ValueError, match="empty"):
        maximization_residual(ex1_problem, oracle_small, arc, u_samples=[])


def test_maximization_alpha_perturbation(ex1_problem):
    # with a strong alpha weight, deviating from u_hat is penalized enough
    # that the residual closes
    u = sm.ControlSignal.constant(0.4, ex1_problem.horizon)
    traj = sm.catchup_simulate(ex1_problem, u, np.array([0.0, 0.433]), 500)
    arc = make_candidate_arc(traj, np.array([0.5, 0.0]), 0.5)
    loose = maximization_residual(ex1_problem, traj, arc, alpha=0.0)
    tight = maximization_residual(ex1_problem, traj, arc, alpha=10.0)
    assert loose > 0.0
    assert tight == 0.0


def test_transversality_point_start_accepts_anything():
    c0 = sm.PointSet(np.array([0.0, 0.433]))
    ct = sm.BallSet(np.zeros(2), 1.0)
    phi = lambda x: (-float(x[0]), np.array([-1.0, 0.0]))
    r0, _ = transversality_residual(c0, ct, phi, np.array([0.0, 0.433]),
                                    np.array([0.5, 0.0]),
                                    np.array([123.0, -7.0]),
                                    np.zeros(2), 1.0)
    assert r0 == 0.0


def test_transversality_certificate_exact(ex1_params, oracle_small,
                                          ex1_problem):
    xT, yT = oracle_small.terminal_state
    pT = np.array([0.0, -yT / xT])
    _, rT = transversality_residual(ex1_problem.c0, ex1_problem.ct,
                                    ex1_problem.phi, oracle_small.states[0],
                                    oracle_small.terminal_state,
                                    np.zeros(2), pT, 1.0)
    assert rT <= 1e-12


def test_transversality_interior_needs_zero_costate(ex1_problem):
    # strictly inside the terminal ball with lam = 0 the residual is |p(T)|
    inside = np.array([0.1, 0.05])
    pT = np.array([0.3, -0.4])
    _, rT = transversality_residual(ex1_problem.c0, ex1_problem.ct,
                                    ex1_problem.phi,
                                    ex1_problem.c0.representative(),
                                    inside, np.zeros(2), pT, 0.0)
    assert rT == pytest.approx(0.5, rel=1e-12)


def test_certificate_passes_all_conditions(ex1_problem, oracle_small,
                                           ex1_report):
    report = assemble_report(ex1_problem, oracle_small,
                             certificate(oracle_small), star=ex1_report.star)
    assert report.passed
    assert report.residual_adjoint == 0.0
    assert report.residual_max == 0.0
    assert report.residual_trans_T <= 1e-12


def test_degenerate_multipliers_fail_nontriviality(ex1_problem, oracle_small):
    arc = make_candidate_arc(oracle_small, np.zeros(2), 0.0)
    report = assemble_report(ex1_problem, oracle_small, arc)
    assert not report.verdicts["nontriviality"]
    assert not report.passed


def test_drifted_candidate_zero_costate_rejected():
    # p = 0 with q != 0 cannot satisfy dp = sigma_drift * q dt
    p2 = sm.build_example2(sigma_drift=0.05)
    u = sm.ControlSignal.bang_bang(1.0, -0.05, 0.56, p2.horizon)
    traj = sm.catchup_simulate(p2, u, p2.c0.representative(), 2000)
    arc = make_candidate_arc(traj, np.array([0.0, -0.45]), 1.0)
    report = assemble_report(p2, traj, arc)
    assert not report.verdicts["adjoint"]
    assert not report.passed


def test_weak_identity_residual_small_for_integrated_arc(
        ex1_problem, ex1_traj_k3, ex1_schedule):
    g, s = ex1_schedule.gammas[2], ex1_schedule.sigmas[2]
    lam, pT = normalize_candidate(0.4, np.array([0.5, -0.3]))
    arc = sm.integrate_adjoint_backward(ex1_problem, ex1_traj_k3, pT, lam,
                                        g, s)
    res = adjoint_identity_residual(ex1_problem, ex1_traj_k3, arc)
    assert res <= 1e-3 * (1.0 + np.max(np.abs(arc.p)) + arc.eta_tv)


def test_verdicts_invariant_under_rescaling(ex1_problem, oracle_small,
                                            ex1_report):
    base = certificate(oracle_small)
    ref = assemble_report(ex1_problem, oracle_small, base,
                          star=ex1_report.star)
    for scale in (1e-3, 1e3):
        lam_s = base.lam * scale
        p_s = base.p * scale
        lam_n, _ = normalize_candidate(lam_s, p_s[-1])
        norm = lam_s + float(np.linalg.norm(p_s[-1]))
        arc = sm.AdjointArc(grid=base.grid, p=p_s / norm, xi=base.xi,
                            deta=base.deta / norm, lam=lam_n,
                            gamma=base.gamma, sigma=base.sigma, info={})
        rep = assemble_report(ex1_problem, oracle_small, arc,
                              star=ex1_report.star)
        assert rep.verdicts == ref.verdicts


def test_normalize_candidate():
    lam, pT = normalize_candidate(2.0, np.array([0.0, 2.0]))
    assert lam == 0.5 and np.allclose(pT, [0.0, 0.5])
    with pytest.raises(ValueError, match="degenerate"):
        normalize_candidate(0.0, np.zeros(2))


def test_report_serializes(ex1_problem, oracle_small, ex1_report):
    report = assemble_report(ex1_problem, oracle_small,
                             certificate(oracle_small), star=ex1_report.star)
    d = report.to_dict()
    assert d["passed"] is True
    assert set(d) >= {"nontriviality", "adjoint_identity", "maximization",
                      "transversality", "bound_diagnostics"}
    assert d["bound_diagnostics"]["xi_cap"] == ex1_report.star
