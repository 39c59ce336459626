"""Forward integration of the penalized dynamics and family convergence runs.

The integrator is an embedded Dormand-Prince 4(5) pair with the step
additionally clamped near the constraint boundary layer, where the penalty
term has Lipschitz constant ~ gamma * xi * |grad psi|^2.  Runs are
deterministic: identical inputs produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .penalty import EXP_GUARD, PenaltySchedule
from .problem import ProblemSpec

Array = np.ndarray


class StepUnderflowError(RuntimeError):
    """Step size collapsed below resolution; stiffness beyond budget."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"step size underflow at t={t:.9g}")


# Dormand-Prince coefficients.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                    -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on [0, T]: value[i] holds on [grid[i], grid[i+1])."""

    grid: Array
    values: Array

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] == 1 and g.size - 1 != 1 and v.shape[1] == g.size - 1:
            v = v.T
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("control grid must be strictly increasing")
        if g[0] != 0.0:
            raise ValueError("control grid must start at 0")
        if v.shape[0] != g.size - 1:
            raise ValueError("need one control value per grid interval")

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def value_at(self, t: float) -> Array:
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        return self.values[min(max(i, 0), self.values.shape[0] - 1)]

    def segment_index(self, t: float) -> int:
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        return min(max(i, 0), self.values.shape[0] - 1)

    def validate_against(self, controls, tol: float = 1e-12) -> None:
        for v in self.values:
            if not controls.contains(v, tol):
                raise ValueError(f"control value {v} outside the control set")

    @classmethod
    def constant(cls, u, horizon: float) -> "ControlSignal":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(np.array([0.0, horizon]), u[None, :])

    @classmethod
    def bang_bang(cls, u_first, u_second, t_switch: float,
                  horizon: float) -> "ControlSignal":
        if not 0.0 < t_switch < horizon:
            raise ValueError("switch time must lie strictly inside (0, T)")
        a = np.atleast_1d(np.asarray(u_first, dtype=float))
        b = np.atleast_1d(np.asarray(u_second, dtype=float))
        return cls(np.array([0.0, t_switch, horizon]), np.vstack([a, b]))


@dataclass
class Trajectory:
    """Sampled state path with per-node psi and multiplier values.

    ``controls[i]`` is the control on [grid[i], grid[i+1]).  ``derivs`` holds
    the state velocity at the nodes when the producer can supply it (the
    penalty integrator does; the catch-up scheme leaves it None).
    """

    grid: Array
    states: Array
    psi: Array
    xi: Array
    controls: Array
    derivs: Optional[Array] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.size
        if self.states.shape[0] != n or self.psi.size != n or self.xi.size != n:
            raise ValueError("trajectory arrays misaligned")
        if self.controls.shape[0] != n - 1:
            raise ValueError("need one control row per grid interval")

    @property
    def terminal_state(self) -> Array:
        return self.states[-1]

    def interp_states(self, t_query: Array) -> Array:
        out = np.empty((np.asarray(t_query).size, self.states.shape[1]))
        for j in range(self.states.shape[1]):
            out[:, j] = np.interp(t_query, self.grid, self.states[:, j])
        return out

    def write_csv(self, path) -> None:
        """CSV schema: t,x1..xn,u1..um,psi,xi (control repeated on last row)."""
        n = self.states.shape[1]
        m = self.controls.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n)]
                  + [f"u{i + 1}" for i in range(m)] + ["psi", "xi"])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for i, t in enumerate(self.grid):
                u = self.controls[min(i, self.controls.shape[0] - 1)]
                row = ([t] + list(self.states[i]) + list(u)
                       + [self.psi[i], self.xi[i]])
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    import re

    data = np.genfromtxt(path, delimiter=",", names=True)
    names = list(data.dtype.names)
    xs = [c for c in names if re.fullmatch(r"x\d+", c)]
    us = [c for c in names if re.fullmatch(r"u\d+", c)]
    grid = np.atleast_1d(data["t"])
    states = np.column_stack([np.atleast_1d(data[c]) for c in xs])
    controls = np.column_stack([np.atleast_1d(data[c]) for c in us])[:-1]
    return Trajectory(grid=grid, states=states,
                      psi=np.atleast_1d(data["psi"]),
                      xi=np.atleast_1d(data["xi"]), controls=controls)


def _rhs(p: ProblemSpec, t: float, x: Array, u: Array, gamma: float,
         sigma: float) -> tuple[Array, float, float]:
    """Penalized velocity, multiplier xi, and |grad psi|^2 at (t, x)."""
    value, grad = p.constraint.value_grad(t, x)
    expo = gamma * (value - sigma)
    if expo > EXP_GUARD:
        raise OverflowError(f"penalty exponent {expo:.3g} at t={t:.6g}")
    xi = gamma * math.exp(expo)
    vel, _ = p.f(t, x, u)
    return vel - xi * grad, xi, float(grad @ grad)


def integrate_forward(p: ProblemSpec, u: ControlSignal, gamma: float,
                      sigma: float, x0, tol: float,
                      mu_k: float | None = None,
                      t_end: float | None = None) -> Trajectory:
    """Integrate the penalized dynamics from x0 with adaptive steps.

    The accepted-step grid is naturally refined inside the boundary layer
    (stability clamp h <= 2 / (gamma * xi * |grad psi|^2)) and always contains
    the control breakpoints.  ``mu_k``, when given, enforces the start-set
    membership psi(0, x0) - sigma <= mu_k.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    x0 = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    u.validate_against(p.controls)
    T = p.horizon if t_end is None else float(t_end)
    if abs(u.horizon - p.horizon) > 1e-12:
        raise ValueError("control signal horizon differs from the problem's")
    psi0 = p.constraint.value(0.0, x0)
    if mu_k is not None and psi0 - sigma > mu_k + 1e-12:
        raise ValueError(
            f"x0 outside the inflated start set: psi - sigma = {psi0 - sigma:.6g}"
            f" > mu_k = {mu_k:.6g}")

    breakpoints = [float(tb) for tb in u.grid if 0.0 < tb < T] + [T]
    h_cap = T / 64.0

    ts = [0.0]
    xs = [x0]
    f0, xi0, _ = _rhs(p, 0.0, x0, u.value_at(0.0), gamma, sigma)
    fs = [f0]
    xis = [xi0]
    psis = [psi0]

    t = 0.0
    x = x0
    h = min(h_cap, T / 1024.0)
    for tb in breakpoints:
        useg = u.value_at(0.5 * (t + tb))
        k1, xi_cur, gn2 = _rhs(p, t, x, useg, gamma, sigma)
        while t < tb - 1e-14 * max(1.0, tb):
            stiff = gamma * xi_cur * gn2
            if stiff * h > 2.0:     # clamp only when it binds
                h = 2.0 / stiff
            h = min(h, h_cap, tb - t)
            if h < 1e-14 * max(1.0, t):
                raise StepUnderflowError(t)
            accepted = False
            for _ in range(60):
                try:
                    k = np.empty((7, x.size))
                    k[0] = k1
                    bad = False
                    for s in range(1, 7):
                        xs_stage = x + h * (_DP_A[s] @ k[:s])
                        if not np.all(np.isfinite(xs_stage)):
                            bad = True
                            break
                        k[s], _, _ = _rhs(p, t + _DP_C[s] * h, xs_stage,
                                          useg, gamma, sigma)
                    if bad:
                        raise OverflowError("non-finite stage state")
                    x_new = x + h * (_DP_B5 @ k)
                    err_vec = h * (_DP_ERR @ k)
                    scale = tol * (1.0 + np.maximum(np.abs(x), np.abs(x_new)))
                    err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
                except OverflowError:
                    h *= 0.5
                    if h < 1e-14 * max(1.0, t):
                        raise StepUnderflowError(t)
                    continue
                if err <= 1.0 or h <= 1e-13 * max(1.0, t + h):
                    accepted = True
                    break
                h *= max(0.2, 0.9 * err ** -0.2)
                if h < 1e-14 * max(1.0, t):
                    raise StepUnderflowError(t)
            if not accepted:
                raise StepUnderflowError(t, f"no acceptable step at t={t:.9g}")
            t = tb if tb - (t + h) < 1e-14 * max(1.0, tb) else t + h
            x = x_new
            k1, xi_cur, gn2 = _rhs(p, t, x, useg, gamma, sigma)  # FSAL refresh
            ts.append(t)
            xs.append(x)
            fs.append(k1)
            xis.append(xi_cur)
            psis.append(p.constraint.value(t, x))
            if err > 0.0:
                h *= min(5.0, max(0.2, 0.9 * err ** -0.2))
            else:
                h *= 5.0

    grid = np.array(ts)
    controls = np.array([u.value_at(0.5 * (a + b))
                         for a, b in zip(ts[:-1], ts[1:])])
    return Trajectory(grid=grid, states=np.array(xs), psi=np.array(psis),
                      xi=np.array(xis), controls=controls,
                      derivs=np.array(fs),
                      meta={"gamma": gamma, "sigma": sigma, "tol": tol,
                            "problem": p.name})


@dataclass
class FamilyReport:
    """Per-k penalty runs compared against the catch-up oracle."""

    ks: list
    gammas: list
    sigmas: list
    sup_gaps: list
    eps: list          # |x_k(T) - x_oracle(T)| per k
    monotone: bool
    failures: dict
    trajectories: list
    oracle: Trajectory
    grid_points: int

    def to_dict(self) -> dict:
        return {
            "ks": self.ks,
            "gammas": self.gammas,
            "sigmas": self.sigmas,
            "sup_gaps": self.sup_gaps,
            "eps": self.eps,
            "monotone": self.monotone,
            "failures": {str(k): v for k, v in self.failures.items()},
            "oracle_steps": int(self.oracle.grid.size - 1),
            "grid_points": self.grid_points,
        }


def run_family(p: ProblemSpec, u: ControlSignal, schedule: PenaltySchedule,
               x0, tol: float = 1e-8, oracle_steps: int = 20000,
               grid_points: int = 2001, ks=None) -> FamilyReport:
    """Integrate the penalty family and measure sup-norm gaps to the oracle.

    Gaps are taken on a common uniform grid by linear interpolation of each
    dense output.  Integration failures are recorded per k and do not abort
    the remaining members.
    """
    from .catchup import catchup_simulate  # deferred: catchup builds on this module

    if p.constraint.value(0.0, np.asarray(x0, dtype=float)) > 1e-9:
        raise ValueError("x0 must lie in C(0)")
    oracle = catchup_simulate(p, u, x0, oracle_steps)
    t_cmp = np.linspace(0.0, p.horizon, grid_points)
    ref = oracle.interp_states(t_cmp)
    ref_T = oracle.terminal_state

    indices = list(range(len(schedule))) if ks is None else [k - 1 for k in ks]
    report = FamilyReport(ks=[], gammas=[], sigmas=[], sup_gaps=[], eps=[],
                          monotone=True, failures={}, trajectories=[],
                          oracle=oracle, grid_points=grid_points)
    for i in indices:
        gamma, sigma, mu_k = schedule.gammas[i], schedule.sigmas[i], schedule.mus[i]
        report.ks.append(i + 1)
        report.gammas.append(gamma)
        report.sigmas.append(sigma)
        try:
            traj = integrate_forward(p, u, gamma, sigma, x0, tol, mu_k=mu_k)
        except (StepUnderflowError, OverflowError, ValueError) as exc:
            report.failures[i + 1] = f"{type(exc).__name__}: {exc}"
            report.trajectories.append(None)
            report.sup_gaps.append(math.nan)
            report.eps.append(math.nan)
            continue
        cur = traj.interp_states(t_cmp)
        gap = float(np.max(np.linalg.norm(cur - ref, axis=1)))
        report.trajectories.append(traj)
        report.sup_gaps.append(gap)
        report.eps.append(float(np.linalg.norm(traj.terminal_state - ref_T)))

    finite = [g for g in report.sup_gaps if math.isfinite(g)]
    report.monotone = all(b <= a for a, b in zip(finite, finite[1:]))
    return report
