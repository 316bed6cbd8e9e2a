"""Dense revised primal simplex for bounded-variable LPs.

Solves ``min c.x  s.t.  A x = b,  lo <= x <= hi`` with finite lower bounds and
possibly infinite upper bounds.  Nonbasic variables sit at one of their
bounds.  Pricing is Dantzig's rule, switching to Bland's rule after a run of
degenerate pivots so that cycling is impossible; the ratio test is Harris'
two-pass rule.  If no starting basis is supplied, a phase one with one
artificial per row finds a feasible vertex first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
REFACTOR_EVERY = 64
BLAND_AFTER = 50


class LPError(RuntimeError):
    pass


class Unbounded(LPError):
    """The objective decreases without limit along ``ray`` from the last vertex."""

    def __init__(self, message: str, ray: np.ndarray | None = None):
        super().__init__(message)
        self.ray = ray


class Infeasible(LPError):
    pass


@dataclass(frozen=True)
class Certificate:
    primal_residual: float
    bound_violation: float
    dual_infeasibility: float
    complementarity: float
    duality_gap: float

    def ok(self, tol: float = 1e-7) -> bool:
        return max(self.primal_residual, self.bound_violation, self.dual_infeasibility,
                   self.complementarity, self.duality_gap) <= tol


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: np.ndarray
    iterations: int
    certificate: Certificate


def certify(A, b, c, lo, hi, x, y, scale: float = 1.0) -> Certificate:
    """KKT residuals of ``(x, y)``, relative to ``scale`` where meaningful."""
    d = c - A.T @ y
    finite_hi = np.isfinite(hi)
    hi_f = np.where(finite_hi, hi, 0.0)
    primal = float(np.max(np.abs(A @ x - b), initial=0.0))
    bound = float(max(np.max(lo - x, initial=0.0), np.max(np.where(finite_hi, x - hi_f, 0.0), initial=0.0)))
    # A negative reduced cost is only admissible for a variable held at a finite upper bound.
    dual_inf = float(np.max(np.where(finite_hi, 0.0, -d), initial=0.0))
    d_pos = np.maximum(d, 0.0)
    d_neg = np.where(finite_hi, np.maximum(-d, 0.0), 0.0)
    comp = float(np.max(d_pos * (x - lo) + d_neg * (hi_f - x), initial=0.0))
    dual_obj = b @ y + d_pos @ lo - d_neg @ hi_f
    gap = abs(float(c @ x - dual_obj))
    return Certificate(primal / scale, bound / scale, dual_inf, comp / scale, gap / scale)


class _Tableau:
    """Basis bookkeeping with an explicit dense inverse."""

    def __init__(self, A, b, lo, hi, basis, at_upper):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self.m, self.n = A.shape
        self.basis = np.array(basis, dtype=int)
        self.at_upper = np.array(at_upper, dtype=bool)
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True
        self.refactor()

    def nonbasic_values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.hi, self.lo)
        x[self.basis] = 0.0
        return x

    def refactor(self) -> None:
        try:
            self.binv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError as exc:
            raise LPError("singular basis") from exc
        xn = self.nonbasic_values()
        self.xb = self.binv @ (self.b - self.A @ xn)
        self.since_refactor = 0

    def x(self) -> np.ndarray:
        x = self.nonbasic_values()
        x[self.basis] = self.xb
        return x

    def pivot(self, leave_row: int, enter: int, col: np.ndarray) -> None:
        piv = col[leave_row]
        row = self.binv[leave_row] / piv
        self.binv -= np.outer(col, row)
        self.binv[leave_row] = row
        self.is_basic[self.basis[leave_row]] = False
        self.basis[leave_row] = enter
        self.is_basic[enter] = True
        self.at_upper[enter] = False
        self.since_refactor += 1


def _iterate(tab: _Tableau, c: np.ndarray, max_iter: int, start_iter: int = 0) -> int:
    """Run primal simplex on ``tab`` for cost ``c``; returns the iteration count."""
    A, lo, hi = tab.A, tab.lo, tab.hi
    degenerate_run = 0
    it = start_iter
    while it < max_iter:
        if tab.since_refactor >= REFACTOR_EVERY:
            tab.refactor()
        y = c[tab.basis] @ tab.binv
        d = c - y @ A
        # Improving directions: increase from lower bound (d < 0), decrease from upper (d > 0).
        can_up = ~tab.is_basic & ~tab.at_upper & (d < -OPT_TOL)
        can_down = ~tab.is_basic & tab.at_upper & (d > OPT_TOL)
        eligible = can_up | can_down
        if not eligible.any():
            return it
        bland = degenerate_run >= BLAND_AFTER
        if bland:
            enter = int(np.flatnonzero(eligible)[0])
        else:
            enter = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
        direction = 1.0 if can_up[enter] else -1.0
        col = tab.binv @ A[:, enter]
        # Basic variables move by -direction * col * theta.
        delta = -direction * col
        span = hi[enter] - lo[enter]
        theta, leave_row, leave_to_upper = _ratio_test(tab, delta, bland)
        if leave_row is None and not np.isfinite(span):
            ray = np.zeros(tab.n)
            ray[enter] = direction
            ray[tab.basis] = delta
            raise Unbounded(f"objective unbounded along column {enter}", ray)
        if leave_row is None or span <= theta:
            # Bound flip of the entering variable.
            theta = span
            tab.at_upper[enter] = not tab.at_upper[enter]
            tab.xb += delta * theta
            degenerate_run = 0 if theta > FEAS_TOL else degenerate_run + 1
            it += 1
            continue
        tab.xb += delta * theta
        entering_value = (lo[enter] if direction > 0 else hi[enter]) + direction * theta
        leaving = tab.basis[leave_row]
        tab.pivot(leave_row, enter, col)
        tab.xb[leave_row] = entering_value
        tab.at_upper[leaving] = leave_to_upper
        degenerate_run = degenerate_run + 1 if theta <= FEAS_TOL else 0
        it += 1
    raise LPError(f"simplex iteration limit {max_iter} reached")


def _ratio_test(tab: _Tableau, delta: np.ndarray, bland: bool):
    """Harris two-pass ratio test; returns ``(theta, row, leaves_at_upper)``."""
    xb = tab.xb
    lo_b = tab.lo[tab.basis]
    hi_b = tab.hi[tab.basis]
    dec = delta < -PIVOT_TOL
    inc = (delta > PIVOT_TOL) & np.isfinite(hi_b)
    if not (dec.any() or inc.any()):
        return np.inf, None, False
    with np.errstate(divide="ignore", invalid="ignore"):
        relaxed = np.full(delta.shape, np.inf)
        relaxed[dec] = (xb[dec] - lo_b[dec] + FEAS_TOL) / -delta[dec]
        relaxed[inc] = (hi_b[inc] - xb[inc] + FEAS_TOL) / delta[inc]
        exact = np.full(delta.shape, np.inf)
        exact[dec] = (xb[dec] - lo_b[dec]) / -delta[dec]
        exact[inc] = (hi_b[inc] - xb[inc]) / delta[inc]
    theta_max = float(np.min(relaxed))
    candidates = np.flatnonzero((exact <= theta_max) & (dec | inc))
    if bland:
        best = exact[candidates].min()
        ties = candidates[exact[candidates] <= best + FEAS_TOL]
        row = int(ties[np.argmin(tab.basis[ties])])
    else:
        row = int(candidates[np.argmax(np.abs(delta[candidates]))])
    theta = max(float(exact[row]), 0.0)
    return theta, row, bool(inc[row])


def solve_lp(A, b, c, lo=None, hi=None, basis=None, max_iter: int = 50_000) -> SimplexResult:
    """Minimize ``c.x`` subject to ``A x = b`` and ``lo <= x <= hi``.

    ``basis`` (one column per row) must be a feasible basis with every
    nonbasic variable at its lower bound; otherwise a phase one is run.
    Raises ``Unbounded`` or ``Infeasible``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise Infeasible("non-finite problem data")
    if not np.all(np.isfinite(lo)) or np.any(hi < lo):
        raise Infeasible("bounds must satisfy -inf < lo <= hi")
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))

    iterations = 0
    if basis is not None:
        tab = _Tableau(A, b, lo, hi, basis, np.zeros(n, dtype=bool))
        if np.any(tab.xb < tab.lo[tab.basis] - FEAS_TOL * scale) or np.any(tab.xb > tab.hi[tab.basis] + FEAS_TOL * scale):
            basis = None
    if basis is None:
        tab, iterations = _phase_one(A, b, lo, hi, max_iter, scale)

    iterations = _iterate(tab, c, max_iter, iterations)
    tab.refactor()
    x = tab.x()
    y = c[tab.basis] @ tab.binv
    d = c - y @ A
    cert = certify(A, b, c, lo, hi, x, y, scale)
    return SimplexResult(x, float(c @ x), y, d, tab.basis.copy(), iterations, cert)


def _phase_one(A, b, lo, hi, max_iter, scale):
    m, n = A.shape
    x0 = lo.copy()
    resid = b - A @ x0
    signs = np.where(resid >= 0, 1.0, -1.0)
    A1 = np.hstack([A, np.diag(signs)])
    lo1 = np.concatenate([lo, np.zeros(m)])
    hi1 = np.concatenate([hi, np.full(m, np.inf)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    tab = _Tableau(A1, b, lo1, hi1, np.arange(n, n + m), np.zeros(n + m, dtype=bool))
    iterations = _iterate(tab, c1, max_iter)
    tab.refactor()
    if float(np.sum(tab.x()[n:])) > FEAS_TOL * scale * m:
        raise Infeasible("phase one ended with positive artificial sum")
    # Drive remaining (zero-valued) artificials out of the basis.
    for row in range(m):
        if tab.basis[row] < n:
            continue
        r = tab.binv[row] @ A
        r[tab.is_basic[:n]] = 0.0
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) > PIVOT_TOL:
            col = tab.binv @ A1[:, j]
            at_upper = tab.at_upper[j]
            tab.pivot(row, j, col)
            tab.xb[row] = hi[j] if at_upper else lo[j]
            tab.refactor()
    if np.any(tab.basis >= n):
        raise LPError("redundant equality constraints are not supported")
    final = _Tableau(A, b, lo, hi, tab.basis, tab.at_upper[:n])
    return final, iterations
