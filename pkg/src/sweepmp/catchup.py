"""Independent catch-up oracle for the sweeping dynamics.

Time stepping alternates a free Euler step with exact projection onto the
sublevel set {psi(t, .) <= 0}.  It is deliberately first order and shares no
code with the penalty integrator, so the two can cross-validate each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .integrate import ControlSignal, Trajectory
from .problem import ConstraintFn, ProblemSpec, SphereConstraint

Array = np.ndarray


class ProjectionError(RuntimeError):
    """Projection onto the sublevel set failed to converge."""

    def __init__(self, t: float, y: Array, message: str):
        self.t = t
        self.y = np.asarray(y, dtype=float)
        super().__init__(f"{message} (t={t:.9g}, y={self.y.tolist()})")


@dataclass(frozen=True)
class ProjectionResult:
    point: Array
    multiplier: float
    active: bool


def project_onto_sublevel(c: ConstraintFn, t: float, y, tol: float = 1e-12,
                          max_iter: int = 100,
                          grad_floor: float = 1e-8) -> ProjectionResult:
    """Closest point of {x : psi(t, x) <= 0} to y.

    Inactive case returns y unchanged.  Otherwise Newton on the scalar s of
    the stationarity system z = y - s * grad psi(t, z), psi(t, z) = 0:
    each outer step refreshes z by damped fixed-point sweeps and updates s
    with the implicit derivative -grad^T (I + s hess)^{-1} grad.  A
    sphere-shaped constraint is detected and projected radially in closed
    form.
    """
    y = np.asarray(y, dtype=float)
    value = c.value(t, y)
    if value <= 0.0:
        return ProjectionResult(point=y.copy(), multiplier=0.0, active=False)

    if isinstance(c, SphereConstraint):
        d = y - c.center
        dist = float(np.linalg.norm(d))
        r = c.radius(t)
        if dist <= 0.0:
            raise ProjectionError(t, y, "degenerate radial projection")
        z = c.center + (r / dist) * d
        s = (dist - r) / (2.0 * r)   # y - z == s * grad psi(z)
        return ProjectionResult(point=z, multiplier=s, active=True)

    s = 0.0
    z = y.copy()
    eye = np.eye(y.size)
    e = c.eval(t, z)
    for _ in range(max_iter):
        gn2 = float(e.grad_x @ e.grad_x)
        if gn2 < grad_floor * grad_floor:
            raise ProjectionError(t, y, "gradient below floor at iterate")
        try:
            d = np.linalg.solve(eye + s * e.hess_x, e.grad_x)
        except np.linalg.LinAlgError:
            d = e.grad_x
        slope = float(e.grad_x @ d)
        if slope <= 0.0:
            slope = gn2
        s = max(0.0, s + e.value / slope)
        # damped sweeps toward the stationarity point for the current s
        damp = 1.0 / (1.0 + s * float(np.linalg.norm(e.hess_x)))
        for _ in range(40):
            target = y - s * e.grad_x
            if float(np.linalg.norm(target - z)) <= 0.25 * tol * (1.0 + abs(s)):
                break
            z = z + damp * (target - z)
            e = c.eval(t, z)
        if abs(e.value) <= tol:
            return ProjectionResult(point=z, multiplier=s, active=True)
    raise ProjectionError(t, y, f"no convergence after {max_iter} Newton steps")


def catchup_simulate(p: ProblemSpec, u: ControlSignal, x0, n_steps: int,
                     proj_tol: float = 1e-12) -> Trajectory:
    """Catch-up discretization on a uniform grid of n_steps intervals.

    x_{i+1} = project(t_{i+1}, x_i + h f(t_i, x_i, u_i)); every node satisfies
    psi(t_i, x_i) <= 1e-10 (viability).  The xi column carries multiplier / h,
    the discrete density of the normal-cone term.
    """
    if n_steps < 100:
        raise ValueError("catch-up needs at least 100 steps")
    x0 = np.asarray(x0, dtype=float)
    if p.constraint.value(0.0, x0) > 1e-10:
        raise ValueError("x0 must lie in C(0)")
    u.validate_against(p.controls)

    T = p.horizon
    h = T / n_steps
    grid = np.linspace(0.0, T, n_steps + 1)
    n = x0.size
    states = np.empty((n_steps + 1, n))
    psis = np.empty(n_steps + 1)
    xis = np.zeros(n_steps + 1)
    controls = np.empty((n_steps, p.control_dim))

    states[0] = x0
    psis[0] = p.constraint.value(0.0, x0)
    seg = np.clip(np.searchsorted(u.grid, grid[:-1], side="right") - 1,
                  0, u.values.shape[0] - 1)
    controls[:] = u.values[seg]
    x = x0.copy()
    f = p.f
    project = project_onto_sublevel
    for i in range(n_steps):
        t_next = grid[i + 1]
        vel, _ = f(grid[i], x, controls[i])
        res = project(p.constraint, t_next, x + h * vel, tol=proj_tol)
        x = res.point
        states[i + 1] = x
        psis[i + 1] = p.constraint.value(t_next, x)
        xis[i + 1] = res.multiplier / h
    return Trajectory(grid=grid, states=states, psi=psis, xi=xis,
                      controls=controls,
                      meta={"scheme": "catchup", "n_steps": n_steps,
                            "problem": p.name})
