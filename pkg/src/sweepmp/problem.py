"""Problem descriptions for controlled sweeping systems.

A problem couples bounded controlled dynamics ``f(t, x, u)`` with a moving
constraint set ``C(t) = {x : psi(t, x) <= 0}`` and simple end-point sets.
This module also measures, on probe grids, the constants (M, eta, mu) that
the penalty schedule and every bound check downstream rely on, and evaluates
the scalar multiplier attached to the constraint normal on the boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

Array = np.ndarray


class AssumptionError(ValueError):
    """A standing assumption fails numerically on the supplied problem."""


# ---------------------------------------------------------------------------
# Moving-set function psi and its derivatives
# ---------------------------------------------------------------------------


class ConstraintEval(NamedTuple):
    value: float
    grad_x: Array
    hess_x: Array
    dt: float
    dt_grad: Array


class ConstraintFn:
    """Moving-set function psi with all derivatives the toolkit needs.

    ``eval`` returns (psi, grad_x psi, hess_x psi, dt psi, dt grad_x psi).
    Subclasses may override ``value_grad`` with a cheaper path; forward
    integration calls it once per right-hand-side evaluation.
    """

    def eval(self, t: float, x: Array) -> ConstraintEval:
        raise NotImplementedError

    def value_grad(self, t: float, x: Array) -> tuple[float, Array]:
        e = self.eval(t, x)
        return e.value, e.grad_x

    def value(self, t: float, x: Array) -> float:
        return self.value_grad(t, x)[0]


_EYE_CACHE: dict[int, Array] = {}


def _two_eye(n: int) -> Array:
    # shared read-only 2*I, allocated once per dimension
    m = _EYE_CACHE.get(n)
    if m is None:
        m = 2.0 * np.eye(n)
        m.setflags(write=False)
        _EYE_CACHE[n] = m
    return m


class SphereConstraint(ConstraintFn):
    """psi(t, x) = |x - c|^2 - R(t)^2 for a radius profile R(t) > 0.

    Both shipped example problems use this shape; the catch-up projection
    recognises it and takes the exact radial shortcut.
    """

    def __init__(self, radius: Callable[[float], float],
                 radius_dot: Callable[[float], float],
                 center: Sequence[float] = (0.0, 0.0)):
        self.radius = radius
        self.radius_dot = radius_dot
        self.center = np.asarray(center, dtype=float)
        self.center.setflags(write=False)
        self._zero = np.zeros_like(self.center)
        self._zero.setflags(write=False)

    def eval(self, t: float, x: Array) -> ConstraintEval:
        d = np.asarray(x, dtype=float) - self.center
        r = self.radius(t)
        val = float(d @ d) - r * r
        dt = -2.0 * r * self.radius_dot(t)
        return ConstraintEval(val, 2.0 * d, _two_eye(d.size), dt, self._zero)

    def value_grad(self, t: float, x: Array) -> tuple[float, Array]:
        d = np.asarray(x, dtype=float) - self.center
        r = self.radius(t)
        return float(d @ d) - r * r, 2.0 * d


class CallableConstraint(ConstraintFn):
    """Wraps a plain function (t, x) -> (value, grad, hess, dt, dt_grad)."""

    def __init__(self, fn: Callable[[float, Array], tuple]):
        self._fn = fn

    def eval(self, t: float, x: Array) -> ConstraintEval:
        value, grad, hess, dt, dt_grad = self._fn(t, np.asarray(x, dtype=float))
        return ConstraintEval(float(value), np.asarray(grad, dtype=float),
                              np.asarray(hess, dtype=float), float(dt),
                              np.asarray(dt_grad, dtype=float))


# ---------------------------------------------------------------------------
# Simple end-point sets with closed-form limiting normal cones
# ---------------------------------------------------------------------------


class SimpleSet:
    """Carrier for end-point sets: point, ball or box.

    Normal cones are available in closed form for each kind, which is what
    the transversality check needs.
    """

    kind: str

    def contains(self, x: Array, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def representative(self) -> Array:
        raise NotImplementedError

    def boundary_samples(self, n: int = 32) -> list[Array]:
        raise NotImplementedError

    def normal_cone_distance(self, v: Array, x: Array,
                             active_tol: float = 1e-3) -> float:
        """Distance from v to the limiting normal cone of the set at x."""
        raise NotImplementedError


@dataclass(frozen=True)
class PointSet(SimpleSet):
    point: Array
    kind: str = field(default="point", init=False)

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    def contains(self, x, tol=1e-9):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.point) <= tol)

    def representative(self):
        return self.point.copy()

    def boundary_samples(self, n=32):
        return [self.point.copy()]

    def normal_cone_distance(self, v, x, active_tol=1e-3):
        # normal cone to a singleton is the whole space
        return 0.0


@dataclass(frozen=True)
class BallSet(SimpleSet):
    center: Array
    radius: float
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0.0:
            raise ValueError("ball radius must be positive")

    def contains(self, x, tol=1e-9):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center)
                    <= self.radius + tol)

    def representative(self):
        return self.center.copy()

    def boundary_samples(self, n=32):
        c = self.center
        if c.size == 1:
            return [c + self.radius, c - self.radius]
        if c.size == 2:
            ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
            return [c + self.radius * np.array([math.cos(a), math.sin(a)])
                    for a in ang]
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((n, c.size))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return [c + self.radius * d for d in dirs]

    def normal_cone_distance(self, v, x, active_tol=1e-3):
        v = np.asarray(v, dtype=float)
        d = np.asarray(x, dtype=float) - self.center
        r = float(np.linalg.norm(d))
        if r < self.radius - active_tol:
            return float(np.linalg.norm(v))       # interior: cone is {0}
        outward = d / r
        beta = max(float(v @ outward), 0.0)       # boundary: outward ray
        return float(np.linalg.norm(v - beta * outward))


@dataclass(frozen=True)
class BoxSet(SimpleSet):
    lo: Array
    hi: Array
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi componentwise")

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def representative(self):
        return 0.5 * (self.lo + self.hi)

    def boundary_samples(self, n=32):
        corners = [np.array(c, dtype=float)
                   for c in itertools.product(*zip(self.lo, self.hi))]
        mids = []
        for i in range(self.lo.size):
            for v in (self.lo[i], self.hi[i]):
                m = self.representative()
                m[i] = v
                mids.append(m)
        return (corners + mids)[:max(n, len(corners))]

    def normal_cone_distance(self, v, x, active_tol=1e-3):
        v = np.asarray(v, dtype=float)
        x = np.asarray(x, dtype=float)
        d2 = 0.0
        for i in range(x.size):
            at_lo = x[i] <= self.lo[i] + active_tol
            at_hi = x[i] >= self.hi[i] - active_tol
            if at_lo and at_hi:
                continue                            # degenerate face: any v_i
            if at_hi:
                d2 += min(v[i], 0.0) ** 2           # cone [0, inf)
            elif at_lo:
                d2 += max(v[i], 0.0) ** 2           # cone (-inf, 0]
            else:
                d2 += v[i] ** 2                     # interior: cone {0}
        return math.sqrt(d2)


# ---------------------------------------------------------------------------
# Control sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxControls:
    """Coordinate box in control space; dynamics affine in u in the examples."""

    lo: Array
    hi: Array

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape:
            raise ValueError("control box lo/hi shape mismatch")
        if np.any(self.lo > self.hi):
            raise ValueError("control box needs lo <= hi")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("control box must be bounded (compactness)")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, u, tol=1e-12):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def extreme_points(self) -> list[Array]:
        return [np.array(c, dtype=float)
                for c in itertools.product(*zip(self.lo, self.hi))]

    def sample_points(self, n_per_axis: int = 5) -> list[Array]:
        axes = [np.linspace(a, b, max(2, n_per_axis)) for a, b in zip(self.lo, self.hi)]
        return [np.array(c, dtype=float) for c in itertools.product(*axes)]


@dataclass(frozen=True)
class FiniteControls:
    """Explicit finite sample list in control space."""

    points: tuple

    def __post_init__(self):
        pts = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in self.points)
        if not pts:
            raise ValueError("control set is empty")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points[0].size

    def contains(self, u, tol=1e-12):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return any(np.linalg.norm(u - p) <= tol for p in self.points)

    def extreme_points(self) -> list[Array]:
        return [p.copy() for p in self.points]

    def sample_points(self, n_per_axis: int = 5) -> list[Array]:
        return self.extreme_points()


ControlSet = BoxControls | FiniteControls


# ---------------------------------------------------------------------------
# Problem record
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Optimal control problem over a sweeping system.

    ``f(t, x, u)`` returns (velocity, jac_x); ``phi(x)`` returns
    (cost, subgradient sample).  ``horizon`` is the final time T.
    """

    f: Callable[[float, Array, Array], tuple[Array, Array]]
    controls: ControlSet
    constraint: ConstraintFn
    c0: SimpleSet
    ct: SimpleSet
    phi: Callable[[Array], tuple[float, Array]]
    horizon: float
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def state_dim(self) -> int:
        return self.c0.representative().size

    @property
    def control_dim(self) -> int:
        return self.controls.dim


# ---------------------------------------------------------------------------
# Assumption validation on probe grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeGrid:
    """Probe densities; the suprema being measured live on continua, so the
    grid density is part of the recorded result."""

    n_t: int = 64
    n_x: int = 64
    n_u: int = 5
    inflate: float = 1.0   # measure over C(t) + inflate * unit ball
    refine: bool = True    # local refinement of the band gradient minimum

    def __post_init__(self):
        if self.n_t < 10 or self.n_x < 10:
            raise ValueError("probe grid needs >= 10 samples per axis")


@dataclass
class AssumptionReport:
    ok: bool
    checks: dict
    M: float
    eta: float
    beta: float
    mu: float
    grad_max: float
    hess_max: float
    lip_phi: float
    grid: ProbeGrid
    notes: list

    @property
    def star(self) -> float:
        """Cap mu / eta^2 on the boundary multiplier."""
        return self.mu / (self.eta * self.eta)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": dict(self.checks),
            "M": self.M,
            "eta": self.eta,
            "beta": self.beta,
            "mu": self.mu,
            "star": self.star,
            "grad_max": self.grad_max,
            "hess_max": self.hess_max,
            "lip_phi": self.lip_phi,
            "grid": {"n_t": self.grid.n_t, "n_x": self.grid.n_x,
                     "n_u": self.grid.n_u, "inflate": self.grid.inflate},
            "notes": list(self.notes),
        }


def _state_box(p: ProblemSpec, t: float, inflate: float) -> tuple[Array, Array]:
    """Axis-aligned box covering C(t) + inflate*B, via radius or ray scan."""
    c = p.constraint
    if isinstance(c, SphereConstraint):
        r = c.radius(t) + inflate
        return c.center - r, c.center + r
    anchor = p.c0.representative()
    n = anchor.size
    lo = anchor.astype(float).copy()
    hi = anchor.astype(float).copy()
    for i in range(n):
        for sign in (-1.0, 1.0):
            d = np.zeros(n)
            d[i] = sign
            s = 1.0
            # doubling scan until psi > 0, then the extent is bracketed
            for _ in range(60):
                if c.value(t, anchor + s * d) > 0.0:
                    break
                s *= 2.0
            else:
                raise AssumptionError("constraint not coercive along an axis "
                                      f"(t={t}); psi never becomes positive")
            a, b = 0.0, s
            for _ in range(40):
                m = 0.5 * (a + b)
                if c.value(t, anchor + m * d) > 0.0:
                    b = m
                else:
                    a = m
            ext = b + inflate
            if sign < 0:
                lo[i] = anchor[i] - ext
            else:
                hi[i] = anchor[i] + ext
    return lo, hi


def _in_inflated_set(p: ProblemSpec, t: float, x: Array, inflate: float) -> bool:
    val = p.constraint.value(t, x)
    if val <= 0.0:
        return True
    from .catchup import project_onto_sublevel  # deferred: catchup builds on this module
    try:
        res = project_onto_sublevel(p.constraint, t, x, tol=1e-10)
    except Exception:
        return False
    return bool(np.linalg.norm(x - res.point) <= inflate)


_NORM_CACHE: dict[int, tuple] = {}


def _spectral_norm(a: Array) -> float:
    # the example jacobians/hessians are shared read-only constants; cache
    # their SVDs keyed by identity (the cache entry keeps the array alive)
    if not a.flags.writeable:
        hit = _NORM_CACHE.get(id(a))
        if hit is not None:
            return hit[1]
        val = float(np.linalg.norm(a, 2))
        _NORM_CACHE[id(a)] = (a, val)
        return val
    return float(np.linalg.norm(a, 2))


def _band_min_at_t(p: ProblemSpec, t: float, x_seed: Array, beta: float,
                   iters: int = 60) -> tuple[float, Array]:
    """Minimise |grad psi(t, .)| over the band {psi >= -beta} from a seed.

    Projected gradient descent on |grad psi|^2; the projection pushes an
    iterate that fell below the band back onto the level psi = -beta along
    the gradient direction.
    """
    c = p.constraint
    x = x_seed.astype(float).copy()
    e = c.eval(t, x)
    gn = float(np.linalg.norm(e.grad_x))
    for _ in range(iters):
        d = e.hess_x @ e.grad_x          # gradient of |grad psi|^2 / 2
        dn = float(np.linalg.norm(d))
        if dn <= 1e-14 * (1.0 + gn):
            break
        step = 0.5 * (gn + 1e-12) / dn
        improved = False
        for _ in range(25):
            x_try = x - step * d
            e_try = c.eval(t, x_try)
            if e_try.value < -beta:      # fell out of the band: pull back
                g = e_try.grad_x
                for _ in range(8):
                    g2 = float(g @ g)
                    if g2 <= 1e-30:
                        break
                    x_try = x_try + ((-beta - e_try.value) / g2) * g
                    e_try = c.eval(t, x_try)
                    g = e_try.grad_x
            gn_try = float(np.linalg.norm(e_try.grad_x))
            if gn_try < gn and e_try.value >= -beta - 1e-12:
                x, e, gn = x_try, e_try, gn_try
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return gn, x


def _refine_band_minimum(p: ProblemSpec, beta: float, seeds: list) -> float:
    """Refine the band gradient minimum: scan t with warm-started local
    minimisation in x, then polish t by golden section."""
    T = p.horizon
    best = math.inf
    best_t = 0.0
    x_warm = seeds[0][1]
    for t in np.linspace(0.0, T, 257):
        gn, x_warm = _band_min_at_t(p, float(t), x_warm, beta)
        if gn < best:
            best, best_t = gn, float(t)
    for _, x0 in seeds[:3]:
        gn, _ = _band_min_at_t(p, best_t, x0, beta)
        best = min(best, gn)

    lo = max(0.0, best_t - T / 256.0)
    hi = min(T, best_t + T / 256.0)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    xw = x_warm

    def g_of(t: float):
        nonlocal xw
        gn, xw = _band_min_at_t(p, t, xw, beta)
        return gn

    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = g_of(c1), g_of(c2)
    for _ in range(40):
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = g_of(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = g_of(c2)
        best = min(best, f1, f2)
    return best


def validate_assumptions(p: ProblemSpec, grid: ProbeGrid = ProbeGrid(),
                         beta: float = 0.01) -> AssumptionReport:
    """Measure the standing constants on probe grids and check each assumption.

    Returns the measured M (bound on |f| and |grad_x f|), the largest eta with
    |grad psi| > eta on the band {psi >= -beta}, and
    mu = max(|grad psi||f| + |dt psi|) + 1 over [0, T] x (C(t)+B) x U.

    Raises AssumptionError when the band gradient vanishes (A3) or the control
    descriptor is empty.
    """
    if not beta > 0.0:
        raise ValueError("beta must be positive")
    u_samples = p.controls.sample_points(grid.n_u)
    if not u_samples:
        raise AssumptionError("control set descriptor is empty")

    T = p.horizon
    n = p.state_dim
    t_grid = np.linspace(0.0, T, grid.n_t)

    M = 0.0
    mu_raw = 0.0
    grad_max = 0.0
    hess_max = 0.0
    band_min = math.inf
    band_seeds: list = []
    coercive = True
    affine_ok = True

    check_affine = isinstance(p.controls, BoxControls) and len(u_samples) >= 2

    for t in t_grid:
        lo, hi = _state_box(p, t, grid.inflate)
        axes = [np.linspace(lo[i], hi[i], grid.n_x) for i in range(n)]
        # coercivity probe: psi must be positive well outside the scanned box
        span = hi - lo
        for i in range(n):
            for sign in (-1.0, 1.0):
                far = p.c0.representative().copy()
                far[i] += sign * 4.0 * max(span[i], 1.0)
                if p.constraint.value(t, far) <= 0.0:
                    coercive = False
        pts = np.stack([a.ravel() for a in np.meshgrid(*axes)], axis=-1)
        if isinstance(p.constraint, SphereConstraint):
            r_in = p.constraint.radius(t) + grid.inflate
            keep = (np.linalg.norm(pts - p.constraint.center, axis=1)
                    <= r_in)
            pts = pts[keep]
        else:
            pts = np.array([x for x in pts
                            if _in_inflated_set(p, t, x, grid.inflate)])
        for idx in range(pts.shape[0]):
            x = pts[idx]
            e = p.constraint.eval(t, x)
            gn = math.sqrt(float(e.grad_x @ e.grad_x))
            grad_max = max(grad_max, gn)
            hess_max = max(hess_max, _spectral_norm(e.hess_x))
            if e.value >= -beta:
                if gn < band_min:
                    band_min = gn
                band_seeds.append((gn, float(t), x))
            fmax = 0.0
            for u in u_samples:
                vel, jac = p.f(t, x, u)
                nf = math.sqrt(float(vel @ vel))
                fmax = max(fmax, nf)
                M = max(M, nf, _spectral_norm(jac))
            if check_affine and idx % 16 == 0:
                ua, ub = u_samples[0], u_samples[-1]
                fa, _ = p.f(t, x, ua)
                fb, _ = p.f(t, x, ub)
                fm, _ = p.f(t, x, 0.5 * (ua + ub))
                if np.linalg.norm(fm - 0.5 * (fa + fb)) > 1e-8 * (1.0 + M):
                    affine_ok = False
            mu_raw = max(mu_raw, gn * fmax + abs(e.dt))

    if grid.refine and band_seeds:
        band_seeds.sort(key=lambda s: s[0])
        seeds = [(t, x) for _, t, x in band_seeds[:4]]
        refined = _refine_band_minimum(p, beta, seeds)
        band_min = min(band_min, refined)

    if not math.isfinite(band_min):
        raise AssumptionError("no probe point found in the band psi >= -beta; "
                              "increase probe density or beta")
    if band_min <= 1e-6 * max(1.0, grad_max):
        raise AssumptionError(
            "A3 violated: |grad psi| vanishes on the band psi >= -beta "
            f"(measured minimum {band_min:.3e})")

    mu = mu_raw + 1.0

    # end-point inclusions C0 in C(0), CT in C(T)
    c0_ok = all(p.constraint.value(0.0, x) <= 1e-9
                for x in p.c0.boundary_samples())
    ct_ok = all(p.constraint.value(T, x) <= 1e-9
                for x in p.ct.boundary_samples())

    # phi Lipschitz rank from subgradient samples over the probe box
    lip_phi = 0.0
    lo, hi = _state_box(p, T, grid.inflate)
    for xt in itertools.product(*[np.linspace(lo[i], hi[i], 9) for i in range(n)]):
        _, g = p.phi(np.array(xt, dtype=float))
        lip_phi = max(lip_phi, float(np.linalg.norm(g)))

    notes = []
    if not check_affine and isinstance(p.controls, FiniteControls) \
            and len(p.controls.points) > 1:
        notes.append("A2 not verified for multi-point finite control sets")

    checks = {
        "a1_bounded_dynamics": math.isfinite(M),
        "a2_convex_velocity_set": affine_ok,
        "a3_band_gradient": True,
        "a3_coercive": coercive,
        "a4_compact_controls": True,
        "a5_closed_end_sets": True,
        "a6_lipschitz_cost": math.isfinite(lip_phi),
        "c0_inside_C0": c0_ok,
        "ct_inside_CT": ct_ok,
    }
    ok = all(checks.values())
    return AssumptionReport(ok=ok, checks=checks, M=M, eta=band_min, beta=beta,
                            mu=mu, grad_max=grad_max, hess_max=hess_max,
                            lip_phi=lip_phi, grid=grid, notes=notes)


# ---------------------------------------------------------------------------
# Boundary multiplier
# ---------------------------------------------------------------------------


def boundary_multiplier(p: ProblemSpec, t: float, x: Array, u: Array,
                        tol: float = 1e-8) -> float:
    """Scalar multiplier of the constraint normal for a state on the boundary.

    Returns (<grad psi, f> + dt psi) / |grad psi|^2 clipped at zero, and zero
    strictly inside C(t).  Raises when the state lies outside the set.
    """
    e = p.constraint.eval(t, np.asarray(x, dtype=float))
    if e.value > tol:
        raise ValueError(f"state outside C(t): psi({t}, x) = {e.value:.3e}")
    if e.value < -tol:
        return 0.0
    g2 = float(e.grad_x @ e.grad_x)
    if g2 <= 0.0:
        raise ValueError("grad psi vanishes on the boundary (A3 violated)")
    vel, _ = p.f(t, np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)))
    xi = (float(e.grad_x @ vel) + e.dt) / g2
    return max(xi, 0.0)
