"""Finite-(N, T) experiments: Gaussian samples, the regularized ES linear program,
empirical order parameters and comparison with the replica prediction.

Returns enter the LP divided by sqrt(N).  With the budget ``sum w = N`` an
equal-weight portfolio then has loss variance ``q0 = mean(sigma^2 w^2)`` of
order one, which is the normalization of the replica free energy.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .replica_core import MarketModel, Regularizer, ReplicaSolution
from .saddle_solver import SolveConfig, solve_saddle
from .simplex import Certificate, Infeasible, LPError, Unbounded, solve_lp

log = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-8


@dataclass(frozen=True)
class SampleSet:
    returns: np.ndarray  # shape (N, T)
    sigmas: np.ndarray  # per-asset volatility, shape (N,)
    seed: int | None = None

    @property
    def n_assets(self) -> int:
        return self.returns.shape[0]

    @property
    def horizon(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class LPSolution:
    weights: np.ndarray
    epsilon_star: float
    cost: float
    es_in: float
    zero_count: int
    sigmas: np.ndarray
    certificate: Certificate
    iterations: int

    @property
    def n_assets(self) -> int:
        return self.weights.size


def assign_groups(fractions, n: int) -> np.ndarray:
    """Group index per asset by largest-remainder rounding of ``fractions * n``."""
    fractions = np.asarray(fractions, dtype=float)
    quotas = fractions * n
    counts = np.floor(quotas).astype(int)
    short = n - counts.sum()
    # Ties go to the earlier group (stable sort).
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return np.repeat(np.arange(fractions.size), counts)


def sample_returns(model: MarketModel, n_assets: int, horizon: int, seed) -> SampleSet:
    """i.i.d. zero-mean Gaussian returns with per-asset volatility from the model's profile."""
    if n_assets < 1 or horizon < 1:
        raise ValueError(f"N and T must be >= 1, got N={n_assets}, T={horizon}")
    sigmas = model.sigmas[assign_groups(model.fractions, n_assets)]
    rng = np.random.default_rng(seed)
    returns = sigmas[:, None] * rng.standard_normal((n_assets, horizon))
    return SampleSet(returns, sigmas, seed if isinstance(seed, int) else None)


def load_returns_csv(path: str | Path) -> SampleSet:
    """Return matrix from CSV (rows = assets, columns = time, optional header row).

    The true volatilities are unknown, so each asset's sample standard
    deviation stands in for sigma in the empirical order parameters.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"{path}: no data")
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(cell) for cell in row] for row in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] < 2 or not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: expected a rectangular finite matrix with at least two columns")
    return SampleSet(data, data.std(axis=1, ddof=1))


def _es_lp(x: np.ndarray, alpha: float, reg: Regularizer):
    """Equality-form data of the ES program.

    Columns: w+ (N), w- (N, omitted under the no-short ban), eps+, eps-,
    u (T), s (T).  Row t reads ``u_t + sum_i x_it w_i + eps - s_t = 0`` and
    the last row is the budget ``sum_i w_i = N``.
    """
    n, t = x.shape
    short = not reg.is_no_short
    blocks = [x.T, -x.T] if short else [x.T]
    eps_cols = np.ones((t, 1))
    top = np.hstack(blocks + [eps_cols, -eps_cols, np.eye(t), -np.eye(t)])
    budget = np.concatenate([np.ones(n), -np.ones(n) if short else np.zeros(0), np.zeros(2 + 2 * t)])
    A = np.vstack([top, budget])
    b = np.zeros(t + 1)
    b[-1] = n
    cost_w = [np.full(n, reg.eta_plus)] + ([np.full(n, reg.eta_minus)] if short else [])
    c = np.concatenate(cost_w + [[t * (1 - alpha), -t * (1 - alpha)], np.ones(t), np.zeros(t)])
    n_w = 2 * n if short else n
    # Feasible start: all budget on asset 0; each row's u_t or s_t absorbs its loss.
    loss0 = -n * x[0]
    u0, s0 = n_w + 2, n_w + 2 + t
    basis = [u0 + k if loss0[k] >= 0 else s0 + k for k in range(t)] + [0]
    return A, b, c, basis, n_w


def optimize_es_lp(sample: SampleSet, alpha: float, reg: Regularizer, normalize: bool = True,
                   max_iter: int = 200_000) -> LPSolution:
    """Minimize ``T(1-alpha) eps + sum_t max(0, -w.x_t - eps) + eta+ sum w+ + eta- sum w-``
    subject to ``sum w = N``.  Raises ``Unbounded`` when the sample admits a runaway portfolio.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    n, t = sample.returns.shape
    x = sample.returns / math.sqrt(n) if normalize else sample.returns
    if not np.all(np.isfinite(x)):
        raise Infeasible("non-finite returns")
    A, b, c, basis, n_w = _es_lp(x, alpha, reg)
    res = solve_lp(A, b, c, basis=basis, max_iter=max_iter)
    z = res.x
    w = z[:n] - (z[n:2 * n] if n_w == 2 * n else 0.0)
    eps = z[n_w] - z[n_w + 1]
    cost = res.objective
    big = np.max(np.abs(w), initial=0.0)
    zeros = int(np.count_nonzero(np.abs(w) <= ZERO_THRESHOLD * big))
    return LPSolution(w, float(eps), float(cost), float(cost / (t * (1.0 - alpha))), zeros,
                      sample.sigmas.copy(), res.certificate, res.iterations)


def direct_cost(sample: SampleSet, alpha: float, reg: Regularizer, weights, epsilon: float,
                normalize: bool = True) -> float:
    """Objective of the ES program evaluated directly at ``(weights, epsilon)``."""
    n, t = sample.returns.shape
    x = sample.returns / math.sqrt(n) if normalize else sample.returns
    w = np.asarray(weights, dtype=float)
    losses = -(w @ x)
    reg_term = reg.eta_plus * np.sum(np.maximum(w, 0.0))
    if np.any(w < 0):
        reg_term += (reg.eta_minus if not reg.is_no_short else math.inf) * np.sum(np.maximum(-w, 0.0))
    return float(t * (1 - alpha) * epsilon + np.sum(np.maximum(losses - epsilon, 0.0)) + reg_term)


def empirical_order_params(lp: LPSolution, model: MarketModel | None = None) -> tuple[float, float, float]:
    """``(q0_emp, n0_emp, es_in_emp)`` using the sample's true volatilities."""
    w = lp.weights
    q0 = float(np.mean(lp.sigmas**2 * w**2))
    return q0, lp.zero_count / w.size, lp.es_in


@dataclass(frozen=True)
class Comparison:
    name: str
    mc_mean: float
    mc_stderr: float
    replica: float

    @property
    def z_score(self) -> float:
        return (self.mc_mean - self.replica) / self.mc_stderr if self.mc_stderr > 0 else math.nan

    @property
    def relative_deviation(self) -> float:
        return self.mc_mean / self.replica - 1.0 if self.replica != 0 else math.nan


@dataclass(frozen=True)
class MCReport:
    model: MarketModel
    regularizer: Regularizer
    n_assets: int
    horizon: int
    n_samples: int
    n_solved: int
    n_unbounded: int
    n_failed: int
    all_certified: bool
    q0: Comparison
    n0: Comparison
    es_in: Comparison
    replica: ReplicaSolution | None

    def rows(self):
        return [self.q0, self.n0, self.es_in]


def _one_sample(args):
    model, reg, n, t, seed_seq = args
    sample = sample_returns(model, n, t, np.random.default_rng(seed_seq))
    try:
        lp = optimize_es_lp(sample, model.alpha, reg)
    except Unbounded:
        return "unbounded", None
    except LPError as exc:
        return "failed", str(exc)
    return "ok", (*empirical_order_params(lp), lp.certificate.ok())


def _stats(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
    return float(arr.mean()), se


def replica_vs_mc(model: MarketModel, reg: Regularizer, n_assets: int, horizon: int,
                  n_samples: int, seed: int, jobs: int = 1, cfg: SolveConfig | None = None) -> MCReport:
    """Sample means of the empirical order parameters against the replica values.

    Per-sample seeds are spawned from ``seed``, so results do not depend on
    ``jobs``.  Unbounded samples are counted, not averaged.
    """
    if abs(n_assets / horizon - model.r) > 0.5 / horizon:
        raise ValueError(f"N/T = {n_assets / horizon:g} does not match r = {model.r:g}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_samples)
    tasks = [(model, reg, n_assets, horizon, child) for child in children]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_one_sample, tasks))
    else:
        outcomes = [_one_sample(task) for task in tasks]
    solved = [payload for status, payload in outcomes if status == "ok"]
    n_unbounded = sum(status == "unbounded" for status, _ in outcomes)
    n_failed = sum(status == "failed" for status, _ in outcomes)
    for status, payload in outcomes:
        if status == "failed":
            log.warning("LP failed: %s", payload)
    try:
        rep = solve_saddle(model, reg, cfg=cfg)
        targets = (rep.params.q0, rep.n0, rep.es_in)
    except RuntimeError as exc:
        log.warning("replica solve failed: %s", exc)
        rep, targets = None, (math.nan,) * 3
    columns = list(zip(*solved)) if solved else [[], [], [], []]
    comps = [Comparison(name, *_stats(col), target)
             for name, col, target in zip(("q0", "n0", "es_in"), columns[:3], targets)]
    return MCReport(model, reg, n_assets, horizon, n_samples, len(solved), n_unbounded, n_failed,
                    all(solved_row[3] for solved_row in solved), *comps, rep)
