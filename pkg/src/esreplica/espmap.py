"""Mapping between regularized and unregularized saddle points (unit volatilities).

With ``z = (lam - eta_plus)/s`` and the tail combinations

    A_Psi = Psi(z) - Psi(-b),  A_Phi = Phi(z) + Phi(-b),  A_W = W(z) + W(-b),
    b = (lam + eta_minus)/s,

a regularized solution at ratio r corresponds to an unregularized one at
``r_eff = r A_Phi`` through

    q0 = q0_eff K^2, delta = delta_eff K, epsilon = epsilon_eff K,
    lam - eta_plus = lam_eff z A_Phi / sqrt(2 A_W - A_Phi),
    q0hat = q0hat_eff A_Phi, deltahat = deltahat_eff A_Phi A_Psi / sqrt(2 A_W - A_Phi),

where ``K = sqrt(2 A_W - A_Phi) / A_Psi``.  All factors are 1 without
regularization, and they only exist while ``2 A_W - A_Phi > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq

from .gaussx import gauss_family
from .replica_core import MarketModel, OrderParameters, Regularizer, ReplicaSolution
from .saddle_solver import solution_from_params

Z_MAX = 40.0


class NoRoot(ValueError):
    """No mapping variable in (0, Z_MAX] reproduces the requested pair (r_eff, r)."""


@dataclass(frozen=True)
class MapFactors:
    a_psi: float
    a_phi: float
    a_w: float
    z: float

    @property
    def gap(self) -> float:
        """``2 A_W - A_Phi``; vanishes where the effective problem is critical."""
        return 2.0 * self.a_w - self.a_phi

    @property
    def k(self) -> float:
        return math.sqrt(self.gap) / self.a_psi


def a_combinations(lam: float, s: float, reg: Regularizer) -> MapFactors:
    if not s > 0.0:
        raise ValueError(f"s must be positive, got {s!r}")
    z = (lam - reg.eta_plus) / s
    _, phi_a, psi_a, w_a = gauss_family(z)
    if reg.is_no_short:
        phi_b = psi_b = w_b = 0.0
    else:
        _, phi_b, psi_b, w_b = gauss_family(-(lam + reg.eta_minus) / s)
    return MapFactors(psi_a - psi_b, phi_a + phi_b, w_a + w_b, z)


def _require_unit_sigma(model: MarketModel) -> None:
    if not model.unit_sigma:
        raise ValueError("the mapping is only available for unit volatilities (sigma_groups=((1, 1),))")


def map_to_effective(sol: ReplicaSolution) -> tuple[OrderParameters, float]:
    """Effective unregularized parameters and ``r_eff = (1 - n0) r``."""
    _require_unit_sigma(sol.model)
    p = sol.params
    f = a_combinations(p.lam, p.s, sol.regularizer)
    if not f.gap > 0.0:
        raise ValueError(f"2 A_W - A_Phi = {f.gap:.3e} <= 0: no effective unregularized image")
    k = f.k
    root_gap = math.sqrt(f.gap)
    eff = OrderParameters(
        lam=(p.lam - sol.regularizer.eta_plus) * root_gap / (f.z * f.a_phi),
        epsilon=p.epsilon / k,
        q0=p.q0 / k**2,
        delta=p.delta / k,
        q0hat=p.q0hat / f.a_phi,
        deltahat=p.deltahat * root_gap / (f.a_phi * f.a_psi),
    )
    return eff, sol.model.r * f.a_phi


def effective_solution(sol: ReplicaSolution) -> ReplicaSolution:
    """``map_to_effective`` packaged as an unregularized solution at ``r_eff``."""
    eff, r_eff = map_to_effective(sol)
    return solution_from_params(eff, sol.model.with_r(r_eff), Regularizer())


def _self_consistent_s(z: float, s_eff: float, reg_s: Regularizer) -> float:
    """Solve ``s = s_eff sqrt(A_Phi(z, s))`` (A_Phi depends on s only through the short tail)."""
    if reg_s.is_zero:
        return s_eff
    if reg_s.is_no_short:
        return s_eff * math.sqrt(gauss_family(z)[1])

    def fixed_point(s):
        return s - s_eff * math.sqrt(a_combinations(z * s, s, reg_s).a_phi)

    return brentq(fixed_point, 1e-300, s_eff, xtol=1e-300, rtol=1e-15)


def map_from_effective(eff: ReplicaSolution, reg: Regularizer, r: float | None = None,
                       tol: float = 1e-8) -> OrderParameters:
    """Regularized parameters whose effective image is ``eff``.

    The mapping variable solves ``2 A_W - A_Phi = z_eff^2 A_Phi`` with
    ``z_eff = lam_eff / s_eff``; the regularized ratio is then
    ``r_eff / A_Phi``.  If ``r`` is given, z is instead fixed by
    ``r A_Phi(z) = r_eff`` and the first condition is verified to ``tol``.
    """
    _require_unit_sigma(eff.model)
    if not eff.regularizer.is_zero:
        raise ValueError("eff must be an unregularized solution")
    if not eff.physical:
        raise ValueError("eff must be physical (lam_eff > 0)")
    pe = eff.params
    s_eff = pe.s
    z_eff = pe.lam / s_eff
    reg_s = reg.shifted()
    r_eff = eff.model.r

    if r is None:
        def g(z):
            s = _self_consistent_s(z, s_eff, reg_s)
            f = a_combinations(z * s, s, reg_s)
            return f.gap - z_eff**2 * f.a_phi
        z = _bracketed_root(g, "2 A_W - A_Phi = z_eff^2 A_Phi")
        s = _self_consistent_s(z, s_eff, reg_s)
        f = a_combinations(z * s, s, reg_s)
    else:
        target = r_eff / r
        if not 0.0 < target <= 1.0:
            raise NoRoot(f"r_eff / r = {target:.6g} lies outside (0, 1]")

        def g(z):
            s = s_eff * math.sqrt(target)
            return a_combinations(z * s, s, reg_s).a_phi - target
        z = _bracketed_root(g, f"r A_Phi(z) = r_eff with r={r:g}")
        s = s_eff * math.sqrt(target)
        f = a_combinations(z * s, s, reg_s)
        mismatch = abs(f.gap - z_eff**2 * f.a_phi)
        if mismatch > tol * max(1.0, z_eff**2):
            raise NoRoot(f"(r_eff={r_eff:g}, r={r:g}) is inconsistent with this regularizer "
                         f"(self-consistency mismatch {mismatch:.2e})")
    if not f.gap > 0.0:
        raise NoRoot("mapped point has 2 A_W - A_Phi <= 0")
    k = f.k
    root_gap = math.sqrt(f.gap)
    return OrderParameters(
        lam=pe.lam * f.z * f.a_phi / root_gap + reg.eta_plus,
        epsilon=pe.epsilon * k,
        q0=pe.q0 * k**2,
        delta=pe.delta * k,
        q0hat=pe.q0hat * f.a_phi,
        deltahat=pe.deltahat * f.a_phi * f.a_psi / root_gap,
    )


def regularized_ratio(eff: ReplicaSolution, reg: Regularizer) -> float:
    """Aspect ratio of the regularized problem whose image is ``eff``."""
    p = map_from_effective(eff, reg)
    f = a_combinations(p.lam, p.s, reg)
    return eff.model.r / f.a_phi


def _bracketed_root(g, what: str) -> float:
    lo = 1e-12
    try:
        g_lo, g_hi = g(lo), g(Z_MAX)
    except ValueError as exc:
        raise NoRoot(f"no z in (0, {Z_MAX:g}] satisfies {what}: {exc}") from exc
    if g_lo == 0.0:
        return lo
    if g_lo * g_hi > 0.0:
        raise NoRoot(f"no z in (0, {Z_MAX:g}] satisfies {what}")
    return brentq(g, lo, Z_MAX, xtol=1e-15, rtol=1e-15, maxiter=500)


__all__ = [
    "MapFactors", "NoRoot", "a_combinations", "map_to_effective", "effective_solution",
    "map_from_effective", "regularized_ratio", "Z_MAX",
]
