"""Newton solver, parameter sweeps and phase-boundary tracing.

Iterations run in the frame where the long slope is folded into the short
one (``lam' = lam - eta_plus``, ``eta = eta_plus + eta_minus``), which leaves
the stationarity conditions unchanged.  The unknown vector is

    x = (lam', epsilon, log q0, log delta, log s, log deltahat)

so that positivity of q0, delta, deltahat and of ``s = sqrt(-2 q0hat)``
holds by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import brentq

from .gaussx import phi, phi_inverse
from .portfolio_stats import condensate_density
from .replica_core import (
    MarketModel,
    OrderParameters,
    Regularizer,
    ReplicaSolution,
    free_energy,
    group_sums,
    residual_jacobian,
    saddle_residuals,
)

log = logging.getLogger(__name__)

SEED_R = 1e-4
ALPHA_MAX = 0.999


class NoConvergence(RuntimeError):
    """Newton iteration stagnated or continuation could not reach the target."""


class LeftPhysicalRegion(RuntimeError):
    """lam - eta_plus changed sign during continuation and the target failed."""


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-10
    max_iter: int = 200
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter!r}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping!r}")


def _pack(p: OrderParameters, eta_plus: float) -> np.ndarray:
    return np.array([p.lam - eta_plus, p.epsilon, math.log(p.q0), math.log(p.delta),
                     math.log(p.s), math.log(p.deltahat)])


def _unpack(x: np.ndarray, eta_plus: float = 0.0) -> OrderParameters:
    s = math.exp(x[4])
    return OrderParameters(float(x[0]) + eta_plus, float(x[1]), math.exp(x[2]), math.exp(x[3]),
                           -0.5 * s * s, math.exp(x[5]))


def complete_information_seed(model: MarketModel) -> OrderParameters:
    """Leading small-r behaviour of all six order parameters.

    q0 = 1/<1/sigma^2>, epsilon = Phi^-1(alpha) sqrt(q0),
    delta = r sqrt(q0) / phi(Phi^-1(alpha)), lam = 1/(delta <1/sigma^2>),
    deltahat = 1/(2 delta) and q0hat = -(1 - alpha)/(2 r).
    """
    inv = model.mean_inv_var
    q0 = 1.0 / inv
    quantile = phi_inverse(model.alpha)
    delta = model.r * math.sqrt(q0) / phi(quantile)
    return OrderParameters(
        lam=1.0 / (delta * inv),
        epsilon=quantile * math.sqrt(q0),
        q0=q0,
        delta=delta,
        q0hat=-(1.0 - model.alpha) / (2.0 * model.r),
        deltahat=1.0 / (2.0 * delta),
    )


class _System:
    """Residuals and their exact Jacobian in the shifted log coordinates."""

    def __init__(self, model: MarketModel, reg_shifted: Regularizer):
        self.model = model
        self.reg = reg_shifted

    def __call__(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="raise", invalid="raise"):
            return saddle_residuals(_unpack(x), self.model, self.reg)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="raise", invalid="raise"):
            return residual_jacobian(_unpack(x), self.model, self.reg)


class _FixedQ0System:
    """Same residuals with q0 held fixed and ``x[2] = log r`` as the unknown.

    Near the critical ratio r(q0) is smooth in 1/q0 while q0(r) is not, so
    this is the well-conditioned way to approach ``1/q0 -> 0``.
    """

    def __init__(self, model: MarketModel, reg_shifted: Regularizer, log_q0: float):
        self.model = model
        self.reg = reg_shifted
        self.log_q0 = log_q0

    def split(self, x: np.ndarray) -> tuple[OrderParameters, MarketModel]:
        y = x.copy()
        y[2] = self.log_q0
        return _unpack(y), self.model.with_r(math.exp(x[2]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        p, model = self.split(x)
        with np.errstate(over="raise", invalid="raise"):
            return saddle_residuals(p, model, self.reg)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        p, model = self.split(x)
        with np.errstate(over="raise", invalid="raise"):
            jac = residual_jacobian(p, model, self.reg)
            res = saddle_residuals(p, model, self.reg)
        # r enters only the q0 and delta conditions, both as 1/r.
        jac[:, 2] = 0.0
        jac[3, 2] = 1.0 - res[3]
        jac[5, 2] = 1.0 - res[5]
        return jac


def _safe_eval(F, x):
    try:
        val = F(x)
    except (ValueError, FloatingPointError, OverflowError, ZeroDivisionError):
        return None
    return val if np.all(np.isfinite(val)) else None


def _newton(F, x0: np.ndarray, cfg: SolveConfig):
    """Damped Newton with backtracking; returns ``(x, inf-norm, iterations)``."""
    x = np.array(x0, dtype=float)
    fx = _safe_eval(F, x)
    if fx is None:
        raise NoConvergence("residuals undefined at the starting point")
    norm = float(np.max(np.abs(fx)))
    it = 0
    polished = False
    history = [norm]
    while it < cfg.max_iter:
        if norm <= cfg.tol:
            if polished or norm < 1e-3 * cfg.tol:
                return x, norm, it
            polished = True
        it += 1
        try:
            jac = F.jacobian(x)
        except (ValueError, FloatingPointError, OverflowError, ZeroDivisionError) as exc:
            raise NoConvergence(f"Jacobian undefined: {exc}") from exc
        try:
            dx = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -fx, rcond=None)[0]
        # Cap moves in the log coordinates and in the two linear ones.
        cap = max(np.max(np.abs(dx[2:])) / 2.0,
                  abs(dx[0]) / (0.5 * max(1.0, abs(x[0]))),
                  abs(dx[1]) / (0.5 * max(1.0, abs(x[1]))), 1.0)
        dx /= cap
        t = cfg.damping
        merit = float(np.dot(fx, fx))
        accepted = False
        while t > 1e-8:
            xt = x + t * dx
            ft = _safe_eval(F, xt)
            if ft is not None and float(np.dot(ft, ft)) < (1.0 - 1e-4 * t) * merit:
                x, fx = xt, ft
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if norm <= cfg.tol:
                return x, norm, it
            raise NoConvergence(f"line search failed at residual norm {norm:.3e}")
        norm = float(np.max(np.abs(fx)))
        history.append(norm)
        if len(history) > 12 and norm > 0.5 * history[-12] and norm > cfg.tol:
            raise NoConvergence(f"Newton stagnated at residual norm {norm:.3e}")
    if norm <= cfg.tol:
        return x, norm, it
    raise NoConvergence(f"no convergence in {cfg.max_iter} iterations (norm {norm:.3e})")


def make_solution(x: np.ndarray, model: MarketModel, reg: Regularizer,
                  norm: float, iterations: int = 0) -> ReplicaSolution:
    """Populate a ReplicaSolution from a converged shifted-frame vector."""
    p = _unpack(x, reg.eta_plus)
    f = free_energy(p, model, reg)
    n0 = condensate_density(p, model, reg)
    q0_tilde = p.q0 * model.mean_inv_var
    return ReplicaSolution(
        model=model,
        regularizer=reg,
        params=p,
        free_energy=f,
        es_in=p.lam * model.r / (1.0 - model.alpha),
        n0=n0,
        r_eff=(1.0 - n0) * model.r,
        q0_tilde=q0_tilde,
        residual_norm=norm,
        physical=bool(x[0] > 0.0),
        iterations=iterations,
    )


def solution_from_params(p: OrderParameters, model: MarketModel, reg: Regularizer) -> ReplicaSolution:
    """Wrap externally obtained parameters, recording their actual residual norm."""
    norm = float(np.max(np.abs(saddle_residuals(p, model, reg))))
    return make_solution(_pack(p, reg.eta_plus), model, reg, norm)


@dataclass
class _Path:
    """Continuation state: the current point and the previous one for secant prediction."""

    t: float
    x: np.ndarray
    prev: tuple[float, np.ndarray] | None = None
    crossed: bool = False

    def predict(self, t_new: float) -> np.ndarray:
        if self.prev is None:
            return self.x.copy()
        t0, x0 = self.prev
        if t0 == self.t:
            return self.x.copy()
        return self.x + (self.x - x0) * (t_new - self.t) / (self.t - t0)

    def advance(self, t_new: float, x_new: np.ndarray) -> None:
        if (x_new[0] > 0.0) != (self.x[0] > 0.0):
            self.crossed = True
        self.prev = (self.t, self.x)
        self.t, self.x = t_new, x_new


def _system_at(model: MarketModel, reg_s: Regularizer, param: str, t: float):
    """System for the continuation variable ``t``: log r, alpha, or log q0 (r free)."""
    if param == "r":
        return _System(model.with_r(math.exp(t)), reg_s)
    if param == "alpha":
        return _System(model.with_alpha(t), reg_s)
    return _FixedQ0System(model, reg_s, t)


def _continue(path: _Path, model: MarketModel, reg_s: Regularizer, param: str,
              t_target: float, cfg: SolveConfig, max_step: float):
    """Walk ``path`` to ``t_target`` with adaptive steps; returns (norm, iterations)."""
    step = max_step
    norm, iters = 0.0, 0
    if path.t == t_target:
        F = _system_at(model, reg_s, param, path.t)
        x, norm, iters = _newton(F, path.x, cfg)
        path.x = x
        return norm, iters
    direction = 1.0 if t_target > path.t else -1.0
    while direction * (t_target - path.t) > 0.0:
        t_new = path.t + direction * min(step, abs(t_target - path.t))
        F = _system_at(model, reg_s, param, t_new)
        try:
            x, norm, iters = _newton(F, path.predict(t_new), cfg)
        except NoConvergence:
            step /= 3.0
            if step < 1e-9 * max(1.0, abs(path.t)):
                raise NoConvergence(f"continuation stalled at {param}={_display(param, path.t):.10g}")
            continue
        path.advance(t_new, x)
        step = min(step * 1.5, max_step)
    return norm, iters


def _display(param: str, t: float) -> float:
    return t if param == "alpha" else math.exp(t)


def _seed_path(model: MarketModel, reg_s: Regularizer, cfg: SolveConfig) -> _Path:
    r0 = min(SEED_R, model.r)
    seed_model = model.with_r(r0)
    x0 = _pack(complete_information_seed(seed_model), 0.0)
    x, _, _ = _newton(_System(seed_model, reg_s), x0, cfg)
    return _Path(math.log(r0), x)


def solve_saddle(model: MarketModel, reg: Regularizer, init: OrderParameters | None = None,
                 cfg: SolveConfig | None = None) -> ReplicaSolution:
    """Solve the six stationarity conditions at ``(model, reg)``.

    Without ``init`` the small-r closed form seeds a geometric continuation
    in r up to ``model.r``.  A converged point beyond the characteristic
    line is returned with ``physical=False``.
    """
    cfg = cfg or SolveConfig()
    reg_s = reg.shifted()
    F = _System(model, reg_s)
    if init is not None:
        try:
            x, norm, iters = _newton(F, _pack(init, reg.eta_plus), cfg)
            return make_solution(x, model, reg, norm, iters)
        except NoConvergence:
            log.debug("warm start failed at r=%g, falling back to continuation", model.r)
    path = _seed_path(model, reg_s, cfg)
    try:
        norm, iters = _continue(path, model, reg_s, "r", math.log(model.r), cfg, max_step=0.5)
    except NoConvergence as exc:
        if path.crossed:
            raise LeftPhysicalRegion(
                f"lam - eta_plus changed sign before r={model.r:g} and the target did not converge"
            ) from exc
        raise
    return make_solution(path.x, model, reg, norm, iters)


def continue_solution(sol: ReplicaSolution, model: MarketModel,
                      cfg: SolveConfig | None = None) -> ReplicaSolution:
    """Warm-started continuation from ``sol`` to a model differing in r or alpha."""
    cfg = cfg or SolveConfig()
    reg = sol.regularizer
    reg_s = reg.shifted()
    x = _pack(sol.params, reg.eta_plus)
    if model.alpha != sol.model.alpha and model.r != sol.model.r:
        sol = continue_solution(sol, sol.model.with_r(model.r), cfg)
        x = _pack(sol.params, reg.eta_plus)
    if model.alpha != sol.model.alpha:
        path = _Path(sol.model.alpha, x)
        param, target, max_step = "alpha", model.alpha, 0.01
    else:
        path = _Path(math.log(sol.model.r), x)
        param, target, max_step = "r", math.log(model.r), 0.5
    try:
        norm, iters = _continue(path, model, reg_s, param, target, cfg, max_step=max_step)
    except NoConvergence as exc:
        if path.crossed:
            raise LeftPhysicalRegion(
                f"lam - eta_plus changed sign on the way to {param}={_display(param, target):g} "
                "and the target did not converge"
            ) from exc
        raise
    return make_solution(path.x, model, reg, norm, iters)


@dataclass
class SweepResult:
    param: str
    solutions: list[ReplicaSolution] = field(default_factory=list)
    reason: str = "completed"  # completed | boundary | divergence | convergence_failure
    failed_index: int | None = None
    message: str = ""

    @property
    def values(self) -> np.ndarray:
        return np.array([getattr(s.model, self.param) for s in self.solutions])


def _beyond_critical(model: MarketModel, cfg: SolveConfig) -> bool:
    try:
        r_c, _ = critical_point(model, cfg)
    except NoConvergence:
        return False
    # r_c may sit within rounding of a grid point (it is 1/2 - O(1e-57) at alpha = 0.975).
    return model.r >= r_c * (1.0 - 1e-8)


def sweep(model: MarketModel, reg: Regularizer, param: str, start: float, stop: float,
          steps: int, cfg: SolveConfig | None = None) -> SweepResult:
    """Solutions on an evenly spaced grid in ``r`` or ``alpha`` by warm-start continuation.

    Stops at the first grid point where ``lam - eta_plus <= 0`` or where the
    branch ends just past that sign change (reason ``boundary``), or where the unregularized solution ceases to exist as
    ``1/q0 -> 0`` (reason ``divergence``).
    """
    if param not in ("r", "alpha"):
        raise ValueError(f"sweep parameter must be 'r' or 'alpha', got {param!r}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = cfg or SolveConfig()
    grid = np.linspace(start, stop, steps) if steps > 1 else np.array([start])
    if param == "r" and np.any(grid <= 0):
        raise ValueError("r grid must be positive")
    if param == "alpha" and np.any((grid <= 0.5) | (grid >= 1.0)):
        raise ValueError("alpha grid must lie in (0.5, 1)")
    result = SweepResult(param=param)
    prev: ReplicaSolution | None = None
    for i, value in enumerate(grid):
        target = model.with_r(value) if param == "r" else model.with_alpha(value)
        try:
            if prev is None:
                sol = solve_saddle(target, reg, cfg=cfg)
            else:
                sol = continue_solution(prev, target, cfg)
        except (NoConvergence, LeftPhysicalRegion) as exc:
            result.failed_index = i
            result.message = str(exc)
            if isinstance(exc, LeftPhysicalRegion):
                result.reason = "boundary"
            elif reg.is_zero and _beyond_critical(target, cfg):
                result.reason = "divergence"
            else:
                result.reason = "convergence_failure"
            return result
        if not sol.physical:
            result.reason = "boundary"
            result.failed_index = i
            result.message = f"lam - eta_plus changed sign before {param}={value:g}"
            return result
        result.solutions.append(sol)
        prev = sol
    return result


@dataclass(frozen=True)
class BoundaryPoint:
    alpha: float
    r: float
    n0: float = float("nan")
    q0: float = float("nan")
    status: str = "ok"


def _bracket_by_march(model: MarketModel, reg: Regularizer, indicator, cfg: SolveConfig,
                      r_start: float = 0.05, factor: float = 1.15, r_max: float = 50.0):
    """March up in r until ``indicator(sol)`` turns non-positive; return the bracketing pair."""
    sol = solve_saddle(model.with_r(r_start), reg, cfg=cfg)
    if indicator(sol) <= 0:
        raise NoConvergence(f"indicator already non-positive at r={r_start}")
    r = r_start
    grow = factor - 1.0
    while r < r_max:
        r_next = r * (1.0 + grow)
        try:
            nxt = continue_solution(sol, model.with_r(r_next), cfg)
        except (NoConvergence, LeftPhysicalRegion):
            # The branch may end (q0 diverging) shortly beyond the sign change.
            grow /= 4.0
            if grow < 1e-12:
                raise
            continue
        if indicator(nxt) <= 0:
            return sol, nxt
        sol, r = nxt, r_next
        grow = min(grow * 1.5, factor - 1.0)
    raise NoConvergence(f"no sign change of the boundary indicator below r={r_max}")


def _root_in_r(lo: ReplicaSolution, hi: ReplicaSolution, indicator, cfg: SolveConfig) -> ReplicaSolution:
    cache: dict[float, ReplicaSolution] = {lo.model.r: lo, hi.model.r: hi}

    def g(r: float) -> float:
        nearest = min(cache.values(), key=lambda s: abs(s.model.r - r))
        sol = continue_solution(nearest, nearest.model.with_r(r), cfg)
        cache[r] = sol
        return indicator(sol)

    r_star = brentq(g, lo.model.r, hi.model.r, xtol=1e-13, rtol=1e-13)
    return cache.get(r_star) or continue_solution(lo, lo.model.with_r(r_star), cfg)


def characteristic_point(model: MarketModel, reg: Regularizer, cfg: SolveConfig | None = None) -> ReplicaSolution:
    """Solution at the aspect ratio where ``lam - eta_plus`` vanishes."""
    cfg = cfg or SolveConfig()

    def indicator(sol):
        return sol.params.lam - reg.eta_plus

    lo, hi = _bracket_by_march(model, reg, indicator, cfg)
    return _root_in_r(lo, hi, indicator, cfg)


def critical_image_point(model: MarketModel, reg: Regularizer, cfg: SolveConfig | None = None) -> ReplicaSolution:
    """Solution where the mapped unregularized problem sits at its critical point.

    There ``2 A_W - A_Phi = 0``: the effective q0 diverges while the
    regularized parameters stay finite.  Only defined for unit volatilities.
    """
    cfg = cfg or SolveConfig()
    if not model.unit_sigma:
        raise ValueError("critical-image tracing is only defined for unit volatilities")

    def indicator(sol):
        sums = group_sums(sol.params, sol.model, reg)
        return 2.0 * sums["w"] - sums["phi"]

    lo, hi = _bracket_by_march(model, reg, indicator, cfg)
    return _root_in_r(lo, hi, indicator, cfg)


def critical_point(model: MarketModel, cfg: SolveConfig | None = None,
                   q0_max: float = 1e8) -> tuple[float, ReplicaSolution]:
    """Unregularized critical ratio r_c(alpha) where ``1/q0 -> 0``.

    Continues in r until q0 is moderately large, then switches to q0 as the
    continuation variable with r solved for.  ``r`` is linear in ``1/q0`` near
    the critical point, so the last two points are extrapolated to ``1/q0 = 0``.
    Returns ``(r_c, solution at the largest q0 reached)``.
    """
    cfg = cfg or SolveConfig()
    reg = Regularizer()
    sol = solve_saddle(model.with_r(0.05), reg, cfg=cfg)
    while sol.params.q0 < 4.0:
        sol = continue_solution(sol, sol.model.with_r(sol.model.r * 1.1), cfg)
    x = _pack(sol.params, 0.0)
    x[2] = math.log(sol.model.r)
    path = _Path(math.log(sol.params.q0), x)
    norm, iters = _continue(path, model, reg, "q0", math.log(q0_max), cfg, max_step=1.0)
    (t0, x0), (t1, x1) = path.prev, (path.t, path.x)
    g0, g1 = math.exp(-t0), math.exp(-t1)
    r0, r1 = math.exp(x0[2]), math.exp(x1[2])
    r_c = r1 - g1 * (r1 - r0) / (g1 - g0) if g1 != g0 else r1
    last = _FixedQ0System(model, reg, t1).split(x1)[1]
    x_last = x1.copy()
    x_last[2] = t1
    return r_c, make_solution(x_last, last, reg, norm, iters)


def trace_boundary(reg: Regularizer, alpha_grid: Iterable[float], cfg: SolveConfig | None = None,
                   sigma_groups=((1.0, 1.0),), line: str = "characteristic") -> list[BoundaryPoint]:
    """Phase-diagram line over ``alpha_grid``.

    Unregularized: the critical line r_c(alpha).  Regularized: the
    characteristic line ``lam - eta_plus = 0`` (``line="characteristic"``) or
    the image of the critical line under the mapping (``line="critical_image"``).
    Failures are reported per alpha instead of aborting the trace.
    """
    if line not in ("characteristic", "critical_image"):
        raise ValueError(f"line must be 'characteristic' or 'critical_image', got {line!r}")
    cfg = cfg or SolveConfig()
    points = []
    for alpha in alpha_grid:
        alpha = float(alpha)
        if not 0.5 < alpha <= ALPHA_MAX:
            points.append(BoundaryPoint(alpha, float("nan"), status="alpha outside (0.5, 0.999]"))
            continue
        model = MarketModel(alpha, 0.1, tuple(sigma_groups))
        try:
            if reg.is_zero:
                r_c, sol = critical_point(model, cfg)
                points.append(BoundaryPoint(alpha, r_c, 0.0, sol.params.q0))
            else:
                finder = critical_image_point if line == "critical_image" else characteristic_point
                sol = finder(model, reg, cfg)
                points.append(BoundaryPoint(alpha, sol.model.r, sol.n0, sol.params.q0))
        except (NoConvergence, LeftPhysicalRegion, ValueError) as exc:
            points.append(BoundaryPoint(alpha, float("nan"), status=f"failed: {exc}"))
    return points


__all__ = [
    "SolveConfig", "NoConvergence", "LeftPhysicalRegion", "SweepResult", "BoundaryPoint",
    "solve_saddle", "continue_solution", "sweep", "trace_boundary", "critical_point",
    "characteristic_point", "critical_image_point", "complete_information_seed", "make_solution",
    "solution_from_params",
]
