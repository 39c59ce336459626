"""Backward costate integration along a stored forward trajectory.

The penalized adjoint equation is

    p' = -(grad_x f)^T p + xi * hess psi p + gamma * xi * grad psi <grad psi, p>

with xi = gamma * exp(gamma * (psi - sigma)).  Backward integration reuses the
forward dense output through cubic Hermite interpolation between checkpoints
(every accepted forward step).  Alongside p, four quadratures are accumulated
at integrator accuracy: the signed measure increments d(eta), their total
variation, the gradient-weighted variation, and the costate arc length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrate import StepUnderflowError, Trajectory, _DP_A, _DP_B5, _DP_C, _DP_ERR
from .penalty import EXP_GUARD
from .problem import ProblemSpec

Array = np.ndarray


@dataclass
class AdjointArc:
    """Backward costate arc sharing the forward trajectory's grid.

    ``deta[i]`` approximates the measure increment over [grid[i], grid[i+1]];
    ``xi`` holds gamma * exp(gamma * (psi - sigma)) at the nodes.
    """

    grid: Array
    p: Array
    xi: Array
    deta: Array
    lam: float
    gamma: float
    sigma: float
    info: dict = field(default_factory=dict)

    @property
    def p_terminal(self) -> Array:
        return self.p[-1]

    @property
    def eta_tv(self) -> float:
        return float(np.sum(np.abs(self.deta)))

    def write_csv(self, path) -> None:
        """CSV schema: t,p1..pn,xi,deta (deta listed at interval left nodes)."""
        n = self.p.shape[1]
        header = ["t"] + [f"p{i + 1}" for i in range(n)] + ["xi", "deta"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for i, t in enumerate(self.grid):
                d = self.deta[i] if i < self.deta.size else 0.0
                row = [t] + list(self.p[i]) + [self.xi[i], d]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def adjoint_rhs(p_spec: ProblemSpec, t: float, x: Array, u: Array, p: Array,
                gamma: float, sigma: float) -> Array:
    """Three-term right-hand side of the penalized adjoint equation."""
    c = p_spec.constraint.eval(t, x)
    expo = gamma * (c.value - sigma)
    if expo > EXP_GUARD:
        raise OverflowError(f"penalty exponent {expo:.3g} at t={t:.6g}")
    xi = gamma * math.exp(expo)
    _, jac = p_spec.f(t, x, u)
    return (-jac.T @ p + xi * (c.hess_x @ p)
            + (gamma * xi) * float(c.grad_x @ p) * c.grad_x)


def _hermite(t: float, t0: float, t1: float, x0: Array, f0: Array,
             x1: Array, f1: Array) -> Array:
    dt = t1 - t0
    th = (t - t0) / dt
    th2 = th * th
    th3 = th2 * th
    return ((2 * th3 - 3 * th2 + 1) * x0 + (th3 - 2 * th2 + th) * dt * f0
            + (-2 * th3 + 3 * th2) * x1 + (th3 - th2) * dt * f1)


def integrate_adjoint_backward(p_spec: ProblemSpec, traj: Trajectory,
                               pT, lam: float, gamma: float, sigma: float,
                               tol: float = 1e-9,
                               substeps: int | None = None,
                               require_normalized: bool = True) -> AdjointArc:
    """Integrate the adjoint backward from (lam, pT) with lam + |pT| = 1.

    The costate is reported at every forward node; between nodes the state is
    interpolated from the forward checkpoints.  ``substeps`` forces a fixed
    uniform number of steps per forward interval (the map pT -> p(.) is then
    exactly linear), otherwise stepping is adaptive with local error <= tol.
    ``require_normalized=False`` lifts the normalization precondition, which
    linearity checks need.
    """
    pT = np.asarray(pT, dtype=float).copy()
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    if require_normalized and abs(lam + float(np.linalg.norm(pT)) - 1.0) > 1e-12:
        raise ValueError("normalization violation: lam + |pT| must equal 1")
    if traj.derivs is None:
        raise ValueError("forward trajectory has no checkpointed derivatives")

    grid = traj.grid
    n_nodes = grid.size
    n = pT.size
    p_out = np.empty((n_nodes, n))
    p_out[-1] = pT
    xi_out = np.empty(n_nodes)
    deta = np.zeros(n_nodes - 1)
    m8 = 0.0   # total variation of eta
    m2 = 0.0   # gradient-weighted variation
    m7 = 0.0   # costate arc length (integral of |p'|)
    k0_run = 0.0
    xi_max = 0.0

    # node diagnostics, xi bitwise identical to the forward values
    gn2_nodes = np.empty(n_nodes)
    for i in range(n_nodes):
        c = p_spec.constraint.eval(grid[i], traj.states[i])
        xi_i = gamma * math.exp(min(gamma * (c.value - sigma), EXP_GUARD))
        xi_out[i] = xi_i
        xi_max = max(xi_max, xi_i)
        gn2_nodes[i] = float(c.grad_x @ c.grad_x)
        ui = traj.controls[min(i, n_nodes - 2)]
        _, jac = p_spec.f(grid[i], traj.states[i], ui)
        k0_run = max(k0_run, float(np.linalg.norm(jac, 2))
                     + xi_i * float(np.linalg.norm(c.hess_x, 2)))

    def aug_rhs(t: float, y: Array, seg: int) -> Array:
        x = _hermite(t, grid[seg], grid[seg + 1], traj.states[seg],
                     traj.derivs[seg], traj.states[seg + 1],
                     traj.derivs[seg + 1])
        p = y[:n]
        c = p_spec.constraint.eval(t, x)
        expo = gamma * (c.value - sigma)
        if expo > EXP_GUARD:
            raise OverflowError(f"penalty exponent {expo:.3g} at t={t:.6g}")
        xi = gamma * math.exp(expo)
        _, jac = p_spec.f(t, x, traj.controls[seg])
        gp = float(c.grad_x @ p)
        dp = -jac.T @ p + xi * (c.hess_x @ p) + (gamma * xi) * gp * c.grad_x
        rate = gamma * xi * gp
        out = np.empty(n + 4)
        out[:n] = dp
        out[n] = rate
        out[n + 1] = abs(rate)
        out[n + 2] = abs(rate) * float(np.linalg.norm(c.grad_x))
        out[n + 3] = float(np.linalg.norm(dp))
        return out

    p_cur = pT
    for seg in range(n_nodes - 2, -1, -1):
        t1, t0 = grid[seg + 1], grid[seg]
        y = np.zeros(n + 4)
        y[:n] = p_cur
        if substeps is not None:
            h = (t0 - t1) / substeps
            t = t1
            for _ in range(substeps):
                y = _rk_step(aug_rhs, t, y, h, seg, n)[0]
                t += h
        else:
            t = t1
            h = t0 - t1
            while t > t0 + 1e-15 * max(1.0, abs(t0)):
                xi_here = max(xi_out[seg], xi_out[seg + 1])
                stiff = gamma * xi_here * max(gn2_nodes[seg], gn2_nodes[seg + 1])
                if stiff * (-h) > 2.0:  # clamp only when it binds
                    h = -2.0 / stiff
                h = -min(-h, t - t0)
                if -h < 1e-15 * max(1.0, abs(t)):
                    raise StepUnderflowError(t, "backward step underflow")
                accepted = False
                for _ in range(60):
                    try:
                        y_new, err = _rk_step(aug_rhs, t, y, h, seg, n, tol)
                    except OverflowError:
                        h *= 0.5
                        if -h < 1e-15 * max(1.0, abs(t)):
                            raise StepUnderflowError(t, "backward step underflow")
                        continue
                    if err <= 1.0 or -h <= 1e-14 * max(1.0, abs(t)):
                        accepted = True
                        break
                    h *= max(0.2, 0.9 * err ** -0.2)
                if not accepted:
                    raise StepUnderflowError(t, "no acceptable backward step")
                t = t0 if (t + h) - t0 < 1e-14 * max(1.0, abs(t0)) else t + h
                y = y_new
                if err > 0.0:
                    h *= min(5.0, max(0.2, 0.9 * err ** -0.2))
                else:
                    h *= 5.0
        p_cur = y[:n]
        p_out[seg] = p_cur
        # quadratures ran from t1 down to t0: forward-interval values negate
        deta[seg] = -y[n]
        m8 += -y[n + 1]
        m2 += -y[n + 2]
        m7 += -y[n + 3]

    pT_norm = float(np.linalg.norm(pT))
    growth = 0.0
    if pT_norm > 0.0:
        for i in range(n_nodes):
            bound = math.exp(k0_run * (grid[-1] - grid[i])) * pT_norm
            growth = max(growth, float(np.linalg.norm(p_out[i])) / bound)
    info = {
        "K0": k0_run,
        "growth_ratio": growth,
        "xi_max": xi_max,
        "eta_tv": float(np.sum(np.abs(deta))),
        "measure_tv": m8,
        "measure_tv_weighted": m2,
        "costate_tv": m7,
        "normalization": lam + pT_norm,
    }
    return AdjointArc(grid=grid.copy(), p=p_out, xi=xi_out, deta=deta,
                      lam=lam, gamma=gamma, sigma=sigma, info=info)


def _rk_step(fun, t, y, h, seg, n, tol=None):
    k = np.empty((7, y.size))
    k[0] = fun(t, y, seg)
    for s in range(1, 7):
        y_stage = y + h * (_DP_A[s] @ k[:s])
        if not np.all(np.isfinite(y_stage)):
            raise OverflowError("non-finite stage")
        k[s] = fun(t + _DP_C[s] * h, y_stage, seg)
    y_new = y + h * (_DP_B5 @ k)
    if tol is None:
        return y_new, 0.0
    err_vec = h * (_DP_ERR @ k[:, :n])
    scale = tol * (1.0 + np.maximum(np.abs(y[:n]), np.abs(y_new[:n])))
    err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
    return y_new, err


def multiplier_profile(arc: AdjointArc, traj: Trajectory,
                       ib_tolerance: float) -> tuple[Array, float, Array]:
    """Limit multiplier profile, measure variation off the interior, I_b mask.

    I_b marks nodes with psi < -ib_tolerance; there the multiplier must be
    exponentially small (<= gamma * exp(-gamma * ib_tolerance / 2)) and the
    returned profile is zeroed.  eta_tv sums |d eta| over intervals touching
    the boundary.
    """
    if arc.grid.shape != traj.grid.shape or not np.array_equal(arc.grid, traj.grid):
        raise ValueError("adjoint arc and trajectory grids differ")
    mask = traj.psi < -ib_tolerance
    cap = arc.gamma * math.exp(-arc.gamma * ib_tolerance / 2.0)
    if mask.any() and float(arc.xi[mask].max()) > cap:
        raise RuntimeError("multiplier not exponentially small strictly "
                           "inside the moving set")
    xi_limit = arc.xi.copy()
    xi_limit[mask] = 0.0
    interior_interval = mask[:-1] & mask[1:]
    eta_tv = float(np.sum(np.abs(arc.deta[~interior_interval])))
    return xi_limit, eta_tv, mask
