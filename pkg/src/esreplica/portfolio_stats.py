"""Observables derived from a converged set of order parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussx import gauss_family, phi, phi_inverse
from .replica_core import (
    MarketModel,
    OrderParameters,
    Regularizer,
    ReplicaSolution,
    group_sums,
    representative_weight,
    tail_arguments,
)


def condensate_density(p: OrderParameters, model: MarketModel, reg: Regularizer) -> float:
    """Fraction of assets whose optimal weight is exactly zero.

    Shares the tail combination with the d/d q0hat residual, so
    ``n0 + sum f (Phi(a) + Phi(-b)) == 1`` holds to the last bit.
    """
    return 1.0 - group_sums(p, model, reg)["phi"]


@dataclass(frozen=True)
class GroupComponent:
    sigma: float
    fraction: float
    center_long: float
    center_short: float | None  # None under the no-short ban
    width: float
    mass_long: float
    mass_short: float


@dataclass(frozen=True)
class WeightDistribution:
    """Point mass at zero plus truncated Gaussians per volatility group.

    The long component of group ``g`` is ``N(center_long, width)`` restricted
    to ``w > 0``; the short component is ``N(center_short, width)`` restricted
    to ``w < 0`` (its centre is positive, so only the lower tail survives).
    """

    n0: float
    groups: tuple[GroupComponent, ...]
    params: OrderParameters
    regularizer: Regularizer

    def density(self, w):
        """Continuous part of ``p(w)``; the atom ``n0 * delta(w)`` is excluded."""
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w)
        for g in self.groups:
            gauss = np.exp(-0.5 * ((w - g.center_long) / g.width) ** 2)
            out += np.where(w > 0.0, g.fraction * gauss, 0.0) / (g.width * math.sqrt(2 * math.pi))
            if g.center_short is not None:
                gauss = np.exp(-0.5 * ((w - g.center_short) / g.width) ** 2)
                out += np.where(w < 0.0, g.fraction * gauss, 0.0) / (g.width * math.sqrt(2 * math.pi))
        return float(out) if out.ndim == 0 else out

    def total_mass(self) -> float:
        return self.n0 + sum(g.fraction * (g.mass_long + g.mass_short) for g in self.groups)

    def mean(self) -> float:
        total = 0.0
        for g in self.groups:
            a = g.center_long / g.width
            total += g.fraction * g.width * gauss_family(a)[2]
            if g.center_short is not None:
                b = g.center_short / g.width
                total -= g.fraction * g.width * gauss_family(-b)[2]
        return total

    def variance_weighted_second_moment(self) -> float:
        """``<sigma^2 w^2>``, the quantity that equals q0 at a stationary point."""
        total = 0.0
        for g in self.groups:
            a = g.center_long / g.width
            w_tail = gauss_family(a)[3]
            if g.center_short is not None:
                w_tail += gauss_family(-g.center_short / g.width)[3]
            total += g.fraction * g.sigma**2 * 2.0 * g.width**2 * w_tail
        return total

    def support(self, n_sd: float = 8.0) -> tuple[float, float]:
        hi = max(g.center_long + n_sd * g.width for g in self.groups)
        lo = 0.0
        for g in self.groups:
            if g.center_short is not None:
                lo = min(lo, g.center_short - n_sd * g.width)
        return lo, max(hi, 0.0)

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``n`` representative weights from standard-normal noise."""
        rng = np.random.default_rng(seed)
        fracs = np.array([g.fraction for g in self.groups])
        idx = rng.choice(len(self.groups), size=n, p=fracs)
        z = rng.standard_normal(n)
        out = np.empty(n)
        for k, g in enumerate(self.groups):
            mask = idx == k
            out[mask] = representative_weight(z[mask], g.sigma, self.params, self.regularizer)
        return out


def weight_distribution(p: OrderParameters, model: MarketModel, reg: Regularizer) -> WeightDistribution:
    s = p.s
    a, minus_b = tail_arguments(p.lam, s, model.sigmas, reg)
    _, phi_a, _, _ = gauss_family(a)
    _, phi_b, _, _ = gauss_family(minus_b)
    groups = []
    for k, (sigma, frac) in enumerate(model.sigma_groups):
        width = s / (2.0 * p.deltahat * sigma)
        center_long = (p.lam - reg.eta_plus) / (2.0 * sigma**2 * p.deltahat)
        center_short = None if reg.is_no_short else (p.lam + reg.eta_minus) / (2.0 * sigma**2 * p.deltahat)
        groups.append(GroupComponent(sigma, frac, center_long, center_short, width,
                                     float(phi_a[k]), float(phi_b[k])))
    return WeightDistribution(condensate_density(p, model, reg), tuple(groups), p, reg)


def in_sample_es(sol: ReplicaSolution) -> float:
    """In-sample ES ``lambda r / (1 - alpha)`` (the free energy equals lambda)."""
    m = sol.model
    return sol.params.lam * m.r / (1.0 - m.alpha)


def estimation_error(sol: ReplicaSolution, model: MarketModel | None = None) -> tuple[float, float]:
    """``(q0_tilde, sqrt(q0_tilde))``; the relative error is the ratio minus one."""
    model = model or sol.model
    q0_tilde = sol.params.q0 * model.mean_inv_var
    return q0_tilde, math.sqrt(q0_tilde)


@dataclass(frozen=True)
class LimitReport:
    q0_true: float
    epsilon_true: float
    es_true: float
    weights: tuple[float, ...]  # per volatility group
    portfolio_variance: float  # sigma_p^2 / N
    structural_constant: float  # mean of 1/sigma^2

    @property
    def q0_tilde(self) -> float:
        return self.q0_true * self.structural_constant


def complete_information(model: MarketModel) -> LimitReport:
    """Closed-form ``r -> 0`` values; ``model.r`` is ignored."""
    inv = model.mean_inv_var
    q0 = 1.0 / inv
    quantile = phi_inverse(model.alpha)
    eps = quantile * math.sqrt(q0)
    es = phi(quantile) * math.sqrt(q0) / (1.0 - model.alpha)
    weights = tuple(float(w) for w in q0 / model.sigmas**2)
    return LimitReport(q0, eps, es, weights, q0, inv)
