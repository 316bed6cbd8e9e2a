"""Model types, free energy and stationarity residuals of the replica solution.

Order parameters are ``(lam, epsilon, q0, delta, q0hat, deltahat)``; the
conjugate overlap enters only through ``s = sqrt(-2 q0hat)``.  With
``u = epsilon / sqrt(q0)`` and ``h = delta / sqrt(q0)`` the ES part of the
free energy depends on the increments of the Gaussian family over
``[u, u + h]``; the regularizer part on the arguments

    a_g = (lam - eta_plus)  / (sigma_g s)
    b_g = (lam + eta_minus) / (sigma_g s)

averaged over the volatility groups.  ``b_g`` is infinite under the
no-short ban, and every term carrying ``-b_g`` then vanishes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .gaussx import gauss_family, interval_integrals

NO_SHORT = math.inf

RESIDUAL_NAMES = ("lambda", "q0hat", "deltahat", "q0", "epsilon", "delta")


@dataclass(frozen=True)
class MarketModel:
    """Confidence level, aspect ratio ``N/T`` and a discrete volatility profile."""

    alpha: float
    r: float
    sigma_groups: tuple[tuple[float, float], ...] = ((1.0, 1.0),)

    def __post_init__(self):
        groups = tuple((float(s), float(f)) for s, f in self.sigma_groups)
        object.__setattr__(self, "sigma_groups", groups)
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0.5, 1), got {self.alpha!r}")
        if not (self.r > 0.0 and math.isfinite(self.r)):
            raise ValueError(f"r must be positive and finite, got {self.r!r}")
        if not groups:
            raise ValueError("sigma_groups must not be empty")
        for sigma, frac in groups:
            if not (sigma > 0.0 and math.isfinite(sigma)):
                raise ValueError(f"sigma must be positive, got {sigma!r}")
            if not frac > 0.0:
                raise ValueError(f"sigma fraction must be positive, got {frac!r}")
        total = sum(f for _, f in groups)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"sigma fractions must sum to 1, got {total!r}")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s for s, _ in self.sigma_groups])

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for _, f in self.sigma_groups])

    @property
    def mean_inv_var(self) -> float:
        """Structural constant ``(1/N) sum_i 1/sigma_i^2``."""
        return float(np.dot(self.fractions, 1.0 / self.sigmas**2))

    @property
    def unit_sigma(self) -> bool:
        return all(s == 1.0 for s, _ in self.sigma_groups)

    def with_r(self, r: float) -> "MarketModel":
        return replace(self, r=float(r))

    def with_alpha(self, alpha: float) -> "MarketModel":
        return replace(self, alpha=float(alpha))


@dataclass(frozen=True)
class Regularizer:
    """Asymmetric l1 slopes; ``eta_minus = NO_SHORT`` bans short positions."""

    eta_plus: float = 0.0
    eta_minus: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eta_plus", float(self.eta_plus))
        object.__setattr__(self, "eta_minus", float(self.eta_minus))
        if not (self.eta_plus >= 0.0 and math.isfinite(self.eta_plus)):
            raise ValueError(f"eta_plus must be finite and >= 0, got {self.eta_plus!r}")
        if not self.eta_minus >= 0.0:
            raise ValueError(f"eta_minus must be >= 0, got {self.eta_minus!r}")

    @classmethod
    def no_short(cls, eta_plus: float = 0.0) -> "Regularizer":
        return cls(eta_plus, NO_SHORT)

    @property
    def is_no_short(self) -> bool:
        return math.isinf(self.eta_minus)

    @property
    def is_zero(self) -> bool:
        return self.eta_plus == 0.0 and self.eta_minus == 0.0

    @property
    def eta_total(self) -> float:
        return self.eta_plus + self.eta_minus

    def shifted(self) -> "Regularizer":
        """Equivalent regularizer with the long slope folded into the short one."""
        return Regularizer(0.0, self.eta_total)


@dataclass(frozen=True)
class OrderParameters:
    lam: float
    epsilon: float
    q0: float
    delta: float
    q0hat: float
    deltahat: float

    @property
    def s(self) -> float:
        """Scale ``sqrt(-2 q0hat)`` of the Gaussian noise in the effective potential."""
        return math.sqrt(-2.0 * self.q0hat)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.lam, self.epsilon, self.q0, self.delta, self.q0hat, self.deltahat)

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OrderParameters":
        lam = d["lambda"] if "lambda" in d else d["lam"]
        return cls(float(lam), float(d["epsilon"]), float(d["q0"]), float(d["delta"]),
                   float(d["q0hat"]), float(d["deltahat"]))


@dataclass(frozen=True)
class ReplicaSolution:
    model: MarketModel
    regularizer: Regularizer
    params: OrderParameters
    free_energy: float
    es_in: float
    n0: float
    r_eff: float
    q0_tilde: float
    residual_norm: float
    physical: bool
    iterations: int = field(default=0, compare=False)

    @property
    def out_ratio(self) -> float:
        """Out-of-sample to true ES ratio ``sqrt(q0_tilde)``."""
        return math.sqrt(self.q0_tilde)

    @property
    def estimation_error(self) -> float:
        return self.out_ratio - 1.0


def _check_domain(p: OrderParameters) -> None:
    if not p.q0 > 0.0:
        raise ValueError(f"q0 must be positive, got {p.q0!r}")
    if not p.q0hat < 0.0:
        raise ValueError(f"q0hat must be negative, got {p.q0hat!r}")
    if not p.delta > 0.0:
        raise ValueError(f"delta must be positive, got {p.delta!r}")
    if not p.deltahat > 0.0:
        raise ValueError(f"deltahat must be positive, got {p.deltahat!r}")


def tail_arguments(lam: float, s: float, sigmas, reg: Regularizer):
    """Arguments ``(a_g, -b_g)`` of the long and short tails for every group."""
    sigmas = np.asarray(sigmas, dtype=float)
    a = (lam - reg.eta_plus) / (sigmas * s)
    if reg.is_no_short:
        minus_b = np.full_like(a, -np.inf)
    else:
        minus_b = -(lam + reg.eta_minus) / (sigmas * s)
    return a, minus_b


def group_sums(p: OrderParameters, model: MarketModel, reg: Regularizer) -> dict[str, float]:
    """Volatility-averaged tail combinations entering the stationarity conditions.

    ``psi``: sum f/sigma (Psi(a) - Psi(-b)); ``phi``: sum f (Phi(a) + Phi(-b));
    ``w``: sum f (W(a) + W(-b)); ``w_inv_var``: as ``w`` weighted by 1/sigma^2.
    """
    sig, frac = model.sigmas, model.fractions
    a, minus_b = tail_arguments(p.lam, p.s, sig, reg)
    _, phi_a, psi_a, w_a = gauss_family(a)
    _, phi_b, psi_b, w_b = gauss_family(minus_b)
    return {
        "psi": float(np.dot(frac / sig, psi_a - psi_b)),
        "phi": float(np.dot(frac, phi_a + phi_b)),
        "w": float(np.dot(frac, w_a + w_b)),
        "w_inv_var": float(np.dot(frac / sig**2, w_a + w_b)),
    }


def _es_increments(p: OrderParameters):
    sq = math.sqrt(p.q0)
    u, h = p.epsilon / sq, p.delta / sq
    d0, d1, j = interval_integrals(u, h)
    return u, h, d0, d1, j


def free_energy(p: OrderParameters, model: MarketModel, reg: Regularizer) -> float:
    """Free energy per asset with both averages in closed form."""
    _check_domain(p)
    alpha, r = model.alpha, model.r
    u, h, _, _, j = _es_increments(p)
    psi_v = gauss_family(u + h)[2]
    w_increment = h * psi_v - j
    sums = group_sums(p, model, reg)
    return (
        p.lam
        - alpha * p.epsilon / r
        - p.delta * p.q0hat
        - p.deltahat * p.q0
        - p.delta / (2.0 * r)
        + math.sqrt(p.q0) * w_increment / (r * h)
        + p.q0hat / p.deltahat * sums["w"]
    )


def saddle_residuals(p: OrderParameters, model: MarketModel, reg: Regularizer) -> np.ndarray:
    """The six stationarity conditions, each scaled to O(1).

    In order: budget (d/d lam), d/d q0hat, d/d deltahat, d/d q0, d/d epsilon
    and d/d delta.  Each entry is the corresponding partial derivative of
    ``free_energy`` times a fixed non-zero factor::

        R1 = df/dlam            R2 = -2 deltahat df/dq0hat
        R3 = -df/ddeltahat / q0 R4 = -df/dq0 / deltahat
        R5 = -(r/alpha) df/deps R6 = -df/ddelta / q0hat
    """
    _check_domain(p)
    alpha, r = model.alpha, model.r
    s = p.s
    sums = group_sums(p, model, reg)
    _, h, d0, d1, j = _es_increments(p)
    return np.array([
        1.0 - s / (2.0 * p.deltahat) * sums["psi"],
        2.0 * p.delta * p.deltahat - sums["phi"],
        1.0 + p.q0hat / (p.deltahat**2 * p.q0) * sums["w"],
        1.0 - d0 / (2.0 * r * p.delta * p.deltahat),
        1.0 - d1 / (alpha * h),
        1.0 + (0.5 / r - j / (r * h * h)) / p.q0hat,
    ])


def residual_jacobian(p: OrderParameters, model: MarketModel, reg: Regularizer) -> np.ndarray:
    """Exact Jacobian of ``saddle_residuals``.

    Columns are derivatives with respect to
    ``(lam, epsilon, log q0, log delta, log s, log deltahat)``.
    """
    _check_domain(p)
    alpha, r = model.alpha, model.r
    s, q0, dl, dh = p.s, p.q0, p.delta, p.deltahat
    sig, frac = model.sigmas, model.fractions
    a, minus_b = tail_arguments(p.lam, s, sig, reg)
    dens_a, phi_a, psi_a, w_a = gauss_family(a)
    dens_b, phi_b, psi_b, w_b = gauss_family(minus_b)
    if reg.is_no_short:
        b = np.zeros_like(a)  # every term in b carries a vanishing tail factor
    else:
        b = -minus_b
    inv_ss = 1.0 / (sig * s)
    s_psi = np.dot(frac / sig, psi_a - psi_b)
    s_w = np.dot(frac, w_a + w_b)
    # d/dlam and d/dlog s of the three tail sums.
    psi_l = np.dot(frac / sig, (phi_a + phi_b) * inv_ss)
    psi_s = np.dot(frac / sig, -a * phi_a - b * phi_b)
    phi_l = np.dot(frac, (dens_a - dens_b) * inv_ss)
    phi_s = np.dot(frac, -a * dens_a + b * dens_b)
    w_l = np.dot(frac, (psi_a - psi_b) * inv_ss)
    w_s = np.dot(frac, -a * psi_a + b * psi_b)

    sq = math.sqrt(q0)
    u, h, d0, d1, j = _es_increments(p)
    v = u + h
    dens_u, cdf_u, _, _ = gauss_family(u)
    dens_v, cdf_v, _, _ = gauss_family(v)
    d0_u, d0_h = dens_v - dens_u, dens_v
    d1_u, d1_h = d0, cdf_v
    j_u, j_h = h * cdf_v - d1, h * cdf_v

    def chain(f_u, f_h):
        # (d/deps, d/dlog q0, d/dlog delta) of a function of (u, h)
        return f_u / sq, -0.5 * (u * f_u + h * f_h), h * f_h

    jac = np.zeros((6, 6))
    c1 = s / (2.0 * dh)
    jac[0, 0] = -c1 * psi_l
    jac[0, 4] = -c1 * (s_psi + psi_s)
    jac[0, 5] = c1 * s_psi

    jac[1, 0] = -phi_l
    jac[1, 3] = 2.0 * dl * dh
    jac[1, 4] = -phi_s
    jac[1, 5] = 2.0 * dl * dh

    k = s * s / (2.0 * dh * dh * q0)
    jac[2, 0] = -k * w_l
    jac[2, 2] = k * s_w
    jac[2, 4] = -k * (2.0 * s_w + w_s)
    jac[2, 5] = 2.0 * k * s_w

    m = 1.0 / (2.0 * r * dl * dh)
    e, lq, ld = chain(d0_u, d0_h)
    jac[3, 1] = -m * e
    jac[3, 2] = -m * lq
    jac[3, 3] = m * d0 - m * ld
    jac[3, 5] = m * d0

    e, lq, ld = chain(d1_u, d1_h)
    jac[4, 1] = -e / (alpha * h)
    jac[4, 2] = -(lq + 0.5 * d1) / (alpha * h)
    jac[4, 3] = -(ld - d1) / (alpha * h)

    pp = 0.5 / r - j / (r * h * h)
    e, lq, ld = chain(j_u, j_h)
    rh2 = r * h * h
    jac[5, 1] = 2.0 * (e / rh2) / (s * s)
    jac[5, 2] = 2.0 * ((lq + j) / rh2) / (s * s)
    jac[5, 3] = 2.0 * ((ld - 2.0 * j) / rh2) / (s * s)
    jac[5, 4] = 4.0 * pp / (s * s)
    return jac


def residual_scales(p: OrderParameters, model: MarketModel) -> np.ndarray:
    """Factors ``c_k`` with ``R_k = c_k * df/dx_k`` in the order of RESIDUAL_NAMES."""
    return np.array([
        1.0,
        -2.0 * p.deltahat,
        -1.0 / p.q0,
        -1.0 / p.deltahat,
        -model.r / model.alpha,
        -1.0 / p.q0hat,
    ])


def representative_weight(z, sigma: float, p: OrderParameters, reg: Regularizer):
    """Minimizer ``w*`` of the effective single-asset potential at noise ``z``."""
    z = np.asarray(z, dtype=float)
    scale = sigma * p.s
    denom = 2.0 * sigma * sigma * p.deltahat
    base = p.lam + scale * z
    long_side = np.maximum(base - reg.eta_plus, 0.0)
    if reg.is_no_short:
        short_side = np.zeros_like(base)
    else:
        short_side = np.minimum(base + reg.eta_minus, 0.0)
    out = (long_side + short_side) / denom
    return float(out) if out.ndim == 0 else out


def make_model(alpha: float, r: float, sigma_groups: Sequence[tuple[float, float]] | None = None) -> MarketModel:
    return MarketModel(alpha, r, tuple(sigma_groups) if sigma_groups else ((1.0, 1.0),))
