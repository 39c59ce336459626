import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import sweepmp as sm

settings.register_profile(
    "suite", max_examples=40, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")

X0 = np.array([0.0, math.sqrt(3.0) / 4.0])


@pytest.fixture(scope="session")
def ex1_problem():
    return sm.build_example1()


@pytest.fixture(scope="session")
def ex1_params():
    return sm.example1_params()


@pytest.fixture(scope="session")
def ex1_report(ex1_problem):
    return sm.validate_assumptions(ex1_problem, sm.ProbeGrid(n_t=33, n_x=33),
                                   beta=0.01)


@pytest.fixture(scope="session")
def ex1_schedule(ex1_report):
    return sm.PenaltySchedule.default(ex1_report.mu, ex1_report.eta)


@pytest.fixture(scope="session")
def ex1_x0():
    return X0.copy()


@pytest.fixture(scope="session")
def ex1_ucontrol(ex1_params):
    return sm.optimal_control_example1(ex1_params)


@pytest.fixture(scope="session")
def ex1_oracle(ex1_problem, ex1_ucontrol, ex1_x0):
    return sm.catchup_simulate(ex1_problem, ex1_ucontrol, ex1_x0, 20000)


@pytest.fixture(scope="session")
def ex1_traj_k3(ex1_problem, ex1_ucontrol, ex1_schedule, ex1_x0):
    return sm.integrate_forward(ex1_problem, ex1_ucontrol,
                                ex1_schedule.gammas[2], ex1_schedule.sigmas[2],
                                ex1_x0, 1e-8, mu_k=ex1_schedule.mus[2])


# one pass/fail line per acceptance criterion in the terminal summary
_acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and "test_acceptance" in str(item.fspath):
        _acceptance_results.append((item.name, rep.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in _acceptance_results:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
