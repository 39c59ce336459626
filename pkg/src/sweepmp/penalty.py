"""Exponential penalty field and its (gamma, sigma) schedule machinery.

The sweeping normal cone is replaced by the smooth field
``gamma * exp(gamma * (psi - sigma)) * grad psi``.  For each sigma in a
vanishing sequence, gamma is chosen so that C(t) stays strictly inside the
inflated set {psi - sigma <= mu(gamma)}, which caps the multiplier
``xi = gamma * exp(gamma * (psi - sigma))`` at mu / eta^2 along trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec

EXP_GUARD = 700.0  # double precision overflow threshold for the exponent


def mu_gamma(gamma: float, mu: float, eta: float) -> float:
    """Inflation level mu(gamma) = (1/gamma) * log(mu / (eta^2 * gamma)).

    Satisfies gamma * exp(gamma * mu(gamma)) == mu / eta^2 exactly.
    """
    if not (gamma > 0.0 and mu > 0.0 and eta > 0.0):
        raise ValueError("mu_gamma needs strictly positive arguments")
    return math.log(mu / (eta * eta * gamma)) / gamma


def choose_gamma(sigma: float, mu: float, eta: float, *, margin: float = 0.5,
                 above: float | None = None) -> float:
    """Smallest qualifying power-of-two multiple of max(1, mu/eta^2).

    A candidate qualifies when the whole tail {gamma' >= gamma} keeps the
    strict inclusion margin mu(gamma') > -margin*sigma, so any later (larger)
    schedule entry preserves C(t) inside the inflated set as well.  ``above``
    excludes candidates <= a previous schedule entry.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1)")
    star = float(mu) / float(eta * eta)
    gamma_start = max(1.0, star)
    hump = math.e * star            # argmax of -mu(gamma); peak value 1/hump
    for j in range(65):
        gamma = gamma_start * 2.0 ** j
        if above is not None and gamma <= above:
            continue
        tail_sup = 1.0 / hump if gamma < hump else -mu_gamma(gamma, mu, eta)
        if tail_sup < margin * sigma:
            return gamma
    raise ValueError("no qualifying gamma up to 2^64 * gamma_start "
                     "(ill-posed constants)")


def penalty_rhs(p: ProblemSpec, t: float, x: np.ndarray, u: np.ndarray,
                gamma: float, sigma: float) -> tuple[np.ndarray, float]:
    """Penalized velocity f - xi * grad psi and the multiplier xi.

    Raises OverflowError when gamma * (psi - sigma) > 700; a state that far
    outside the inflated set means the integration has already failed.
    """
    value, grad = p.constraint.value_grad(t, x)
    expo = gamma * (value - sigma)
    if expo > EXP_GUARD:
        raise OverflowError(
            f"penalty exponent {expo:.3g} beyond double range at t={t:.6g}")
    xi = gamma * math.exp(expo)
    vel, _ = p.f(t, x, u)
    return vel - xi * grad, xi


@dataclass(frozen=True)
class PenaltySchedule:
    """Vanishing sigmas with matching gammas and inflation levels mu_k."""

    sigmas: tuple
    gammas: tuple
    mu: float
    eta: float
    mus: tuple

    def __post_init__(self):
        k = len(self.sigmas)
        if not (k == len(self.gammas) == len(self.mus)) or k == 0:
            raise ValueError("schedule arrays must be nonempty and aligned")
        if any(s <= 0 for s in self.sigmas) or \
                any(b >= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("sigmas must be positive and strictly decreasing")
        if any(g <= 0 for g in self.gammas) or \
                any(b <= a for a, b in zip(self.gammas, self.gammas[1:])):
            raise ValueError("gammas must be positive and strictly increasing")
        star = self.star
        for s, g, m in zip(self.sigmas, self.gammas, self.mus):
            if not m > -s:
                raise ValueError("inclusion fails: mu(gamma_k) <= -sigma_k")
            if abs(g * math.exp(g * m) - star) > 1e-12 * star:
                raise ValueError("mus inconsistent with mu(gamma) identity")

    @property
    def star(self) -> float:
        return self.mu / (self.eta * self.eta)

    def __len__(self) -> int:
        return len(self.sigmas)

    @classmethod
    def default(cls, mu: float, eta: float, *, k: int = 8,
                sigma_ratio: float = 1.0 / 3.0,
                margin: float = 0.5) -> "PenaltySchedule":
        """Geometric sigmas sigma_ratio**k with gammas from choose_gamma.

        Strict increase of the gammas is enforced by excluding candidates at
        or below the previous entry (the tail condition keeps them valid).
        """
        if not 0.0 < sigma_ratio < 1.0:
            raise ValueError("sigma_ratio must lie in (0, 1)")
        if k < 1:
            raise ValueError("schedule needs at least one entry")
        sigmas, gammas, mus = [], [], []
        prev = None
        for i in range(1, k + 1):
            s = sigma_ratio ** i
            g = choose_gamma(s, mu, eta, margin=margin, above=prev)
            sigmas.append(s)
            gammas.append(g)
            mus.append(mu_gamma(g, mu, eta))
            prev = g
        return cls(tuple(sigmas), tuple(gammas), mu, eta, tuple(mus))
