"""Closed-form machinery and parameter synthesis for the two disc examples.

Example 1: shrinking-then-growing disc C(t) of radius rho(t) = (1-2t)^2 + 1/4,
dynamics (u, 0) with u in [-mu_ctrl, 1], cost -x(T), start (0, sqrt(3)/4).
The optimal trajectory moves right, rides the disc boundary, and leaves it at
t2 with control -mu_ctrl so that it lands exactly on the terminal ball.

Example 2 adds a small downward drift -sigma_drift * x to the y dynamics;
its optimal control is found by a one-dimensional switch-time search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .catchup import catchup_simulate
from .integrate import ControlSignal, Trajectory
from .problem import BallSet, BoxControls, PointSet, ProblemSpec, SphereConstraint

Array = np.ndarray

Y0 = math.sqrt(3.0) / 4.0
T1 = 0.25


def rho(t: float) -> float:
    """Disc radius (1 - 2t)^2 + 1/4."""
    return (1.0 - 2.0 * t) ** 2 + 0.25


def rho_dot(t: float) -> float:
    return 8.0 * t - 4.0


def polar_rhs(r: float, phi: float, u: float,
              lambda_mult: float) -> tuple[float, float]:
    """Polar form of the planar dynamics with a radial normal term.

    r' = u cos(phi) - lambda * r,  phi' = -u sin(phi) / r.
    """
    if r <= 1e-12:
        raise ValueError("polar dynamics undefined at r ~ 0")
    return u * math.cos(phi) - lambda_mult * r, -u * math.sin(phi) / r


def _tau_of_t(t: float) -> float:
    return math.exp(math.atan(2.0 * (1.0 - 2.0 * t)) - math.pi / 4.0) / math.sqrt(3.0)


def phi_boundary(t: float) -> float:
    """Polar angle along the boundary arc under u = 1; phi(1/4) = pi/3 exactly."""
    return 2.0 * math.atan(_tau_of_t(t))


@lru_cache(maxsize=1)
def solve_tstar() -> tuple[float, float]:
    """Last time the boundary motion can keep up: cos(phi(t)) = rho'(t).

    Solved by bisection on (1/2, 5/8); the bracket follows from
    |(1 - tau^2)/(1 + tau^2)| < 1 for tau > 0, asserted hard below.
    """
    def g(t: float) -> float:
        tau = _tau_of_t(t)
        return (1.0 - tau * tau) / (1.0 + tau * tau) - (8.0 * t - 4.0)

    a, b = 0.5, 0.625
    if not (g(a) > 0.0 and g(b) < 0.0):
        raise RuntimeError("bisection bracket failure for the switch-limit time")
    for _ in range(100):
        m = 0.5 * (a + b)
        if g(m) > 0.0:
            a = m
        else:
            b = m
    tstar = 0.5 * (a + b)
    if not tstar > 0.5:
        raise RuntimeError("switch-limit time must exceed 1/2")
    return tstar, _tau_of_t(tstar)


@dataclass(frozen=True)
class Example1Params:
    t1: float
    tstar: float
    tau: float
    theta: float
    t2: float
    T: float
    mu_ctrl: float
    rT: float
    Delta: float

    @property
    def r2(self) -> float:
        """Disc radius at the leave time t2 (= 4 theta^2 + 1/4)."""
        return rho(self.t2)

    @property
    def phi2(self) -> float:
        return phi_boundary(self.t2)

    def state_t2(self) -> Array:
        r, a = self.r2, self.phi2
        return np.array([r * math.cos(a), r * math.sin(a)])

    def state_T(self) -> Array:
        x2, y2 = self.state_t2()
        return np.array([x2 - self.mu_ctrl * (self.T - self.t2), y2])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("t1", "tstar", "tau", "theta", "t2", "T", "mu_ctrl",
                 "rT", "Delta")}


def example1_params(mu_ctrl: float = 0.05) -> Example1Params:
    """Synthesise (theta, t2, T, rT, Delta) for a given control bound mu_ctrl.

    Validates the chained radii inequalities and Delta > 0; both fail when
    mu_ctrl is too large for the geometry.
    """
    if not mu_ctrl > 0.0:
        raise ValueError("mu_ctrl must be positive")
    tstar, tau = solve_tstar()
    theta = 0.5 * (tstar - 0.5)
    t2 = 0.5 + theta
    T = 0.5 * (1.0 + 3.0 * theta)

    r2 = rho(t2)
    phi2 = phi_boundary(t2)
    x2, y2 = r2 * math.cos(phi2), r2 * math.sin(phi2)
    rT_sq = y2 * y2 + (x2 - 0.5 * mu_ctrl * theta) ** 2
    rT = math.sqrt(rT_sq)

    phidot2 = -math.sin(phi2) / r2
    xdot2 = rho_dot(t2) * math.cos(phi2) - r2 * math.sin(phi2) * phidot2
    Delta = (2.0 * r2 * rho_dot(t2) - mu_ctrl * theta * xdot2
             + 2.0 * mu_ctrl * x2 - mu_ctrl * mu_ctrl * theta)

    if not (rho(T) > r2 > rT > r2 * math.sin(phi2)):
        raise ValueError(f"mu_ctrl={mu_ctrl} too large: radius chain fails")
    if not Delta > 0.0:
        raise ValueError(f"mu_ctrl={mu_ctrl} too large: Delta = {Delta} <= 0")
    return Example1Params(t1=T1, tstar=tstar, tau=tau, theta=theta, t2=t2,
                          T=T, mu_ctrl=mu_ctrl, rT=rT, Delta=Delta)


def optimal_control_example1(params: Example1Params) -> ControlSignal:
    """u = 1 up to the leave time t2, then -mu_ctrl."""
    return ControlSignal.bang_bang(1.0, -params.mu_ctrl, params.t2, params.T)


# ---------------------------------------------------------------------------
# Problem builders and registry
# ---------------------------------------------------------------------------


def _planar_push(sigma_drift: float = 0.0):
    """Dynamics (u, -sigma_drift * x); jacobian is constant."""
    jac = np.array([[0.0, 0.0], [-sigma_drift, 0.0]])
    jac.setflags(write=False)

    def f(t, x, u):
        return np.array([u[0], -sigma_drift * x[0]]), jac

    return f


def build_example1(mu_ctrl: float = 0.05) -> ProblemSpec:
    params = example1_params(mu_ctrl)
    constraint = SphereConstraint(rho, rho_dot)
    return ProblemSpec(
        f=_planar_push(0.0),
        controls=BoxControls([-mu_ctrl], [1.0]),
        constraint=constraint,
        c0=PointSet(np.array([0.0, Y0])),
        ct=BallSet(np.array([0.0, 0.0]), params.rT),
        phi=lambda x: (-float(x[0]), np.array([-1.0, 0.0])),
        horizon=params.T,
        name="example1",
    )


def build_example2(mu_ctrl: float = 0.05,
                   sigma_drift: float = 0.05) -> ProblemSpec:
    if not sigma_drift > 0.0:
        raise ValueError("sigma_drift must be positive")
    params = example1_params(mu_ctrl)
    return ProblemSpec(
        f=_planar_push(sigma_drift),
        controls=BoxControls([-mu_ctrl], [1.0]),
        constraint=SphereConstraint(rho, rho_dot),
        c0=PointSet(np.array([0.0, Y0])),
        ct=BallSet(np.array([0.0, 0.0]), params.rT),
        phi=lambda x: (-float(x[0]), np.array([-1.0, 0.0])),
        horizon=params.T,
        name="example2",
    )


def build_static_disc(radius: float = 1.0, horizon: float = 1.5,
                      u_lo: float = -1.0, u_hi: float = 1.0,
                      x0=(0.0, 0.0)) -> ProblemSpec:
    """Constant disc |x| <= radius with dynamics (u, 0); a plain test bed."""
    r = float(radius)
    return ProblemSpec(
        f=_planar_push(0.0),
        controls=BoxControls([u_lo], [u_hi]),
        constraint=SphereConstraint(lambda t: r, lambda t: 0.0),
        c0=PointSet(np.asarray(x0, dtype=float)),
        ct=BallSet(np.array([0.0, 0.0]), r),
        phi=lambda x: (-float(x[0]), np.array([-1.0, 0.0])),
        horizon=horizon,
        name="static-disc",
    )


_BUILDERS = {
    "example1": build_example1,
    "example2": build_example2,
    "static-disc": build_static_disc,
}


def get_problem(name: str, **overrides) -> ProblemSpec:
    """Instantiate a registered built-in problem with parameter overrides."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; "
                         f"known: {sorted(_BUILDERS)}") from None
    return builder(**overrides)


# ---------------------------------------------------------------------------
# Switch-time search for the drifted example
# ---------------------------------------------------------------------------


@dataclass
class SwitchSearchResult:
    best_switch: float
    best_cost: float
    cost_curve: Array          # columns: switch time, cost, admissible flag
    adversary_costs: list
    n_admissible: int

    def to_dict(self) -> dict:
        return {
            "best_switch": self.best_switch,
            "best_cost": self.best_cost,
            "n_admissible": self.n_admissible,
            "adversary_costs": list(self.adversary_costs),
        }


def _terminal_cost(p: ProblemSpec, traj: Trajectory) -> float:
    return p.phi(traj.terminal_state)[0]


def _admissible(p: ProblemSpec, traj: Trajectory, tol: float) -> bool:
    return p.ct.contains(traj.terminal_state, tol)


def example2_search(p: ProblemSpec, n_switch: int = 120, *,
                    steps: int = 6000, n_adversaries: int = 20,
                    seed: int = 42, admis_tol: float = 2e-3,
                    switch_lo: float | None = None) -> SwitchSearchResult:
    """Grid search over the switch time of the bang-bang family u = 1 then -mu.

    Each candidate is simulated with the catch-up scheme; trajectories missing
    the terminal ball are discarded.  The winner must also beat a seeded batch
    of random admissible non-bang-bang controls, else a RuntimeError signals a
    broken search.
    """
    if n_switch < 100:
        raise ValueError("switch grid needs at least 100 points")
    T = p.horizon
    u_hi = 1.0
    u_lo = float(p.controls.lo[0])
    lo = T1 if switch_lo is None else switch_lo
    grid = np.linspace(lo, T - 1e-3, n_switch)

    x0 = p.c0.representative()
    rows = np.empty((n_switch, 3))
    best_cost = math.inf
    best_switch = math.nan
    n_adm = 0
    for i, ts in enumerate(grid):
        u = ControlSignal.bang_bang(u_hi, u_lo, float(ts), T)
        traj = catchup_simulate(p, u, x0, steps)
        adm = _admissible(p, traj, admis_tol)
        cost = _terminal_cost(p, traj)
        rows[i] = (ts, cost, 1.0 if adm else 0.0)
        if adm:
            n_adm += 1
            if cost < best_cost:
                best_cost, best_switch = cost, float(ts)
    if n_adm == 0:
        raise RuntimeError("no admissible switch time on the grid")

    rng = np.random.default_rng(seed)
    adversary_costs: list = []
    attempts = 0
    while len(adversary_costs) < n_adversaries and attempts < 80 * n_adversaries:
        attempts += 1
        ts = best_switch + rng.uniform(-0.08, 0.02)
        ts = min(max(ts, 0.05), T - 0.02)
        n_seg = int(rng.integers(3, 6))
        cuts = np.sort(rng.uniform(0.0, T, n_seg - 1))
        cuts = np.concatenate(([0.0], cuts, [T]))
        if np.any(np.diff(cuts) <= 1e-6):
            continue
        values = np.where(cuts[:-1] < ts, u_hi, u_lo).astype(float)
        # randomly deform one or two interior segments off the extreme values
        for j in rng.choice(n_seg, size=min(2, n_seg), replace=False):
            values[j] = rng.uniform(u_lo, u_hi)
        u = ControlSignal(cuts, values[:, None])
        traj = catchup_simulate(p, u, x0, steps)
        if not _admissible(p, traj, admis_tol):
            continue
        cost = _terminal_cost(p, traj)
        adversary_costs.append(cost)
        if cost < best_cost - 1e-9:
            raise RuntimeError(
                f"random admissible control beats the switch search "
                f"({cost} < {best_cost}); search is inconsistent")

    return SwitchSearchResult(best_switch=best_switch, best_cost=best_cost,
                              cost_curve=rows,
                              adversary_costs=adversary_costs,
                              n_admissible=n_adm)
