"""Shared oracles and fixtures.

The oracles here use scipy.stats / scipy.integrate directly so that they do
not share code with the package under test.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, optimize
from scipy.stats import norm

from esreplica.replica_core import MarketModel, Regularizer

# Lines recorded by the acceptance tests and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def quad_phi(x: float) -> float:
    return norm.cdf(x)


def pdf(t: float) -> float:
    # Scalar density; much cheaper under quad than scipy.stats.norm.pdf.
    return math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def quad_psi(x: float) -> float:
    """int_{-inf}^x Phi = int_{-inf}^x (x - t) phi(t) dt."""
    f = lambda t: (x - t) * pdf(t)
    return _split_quad(f, x)


def quad_w(x: float) -> float:
    """int_{-inf}^x Psi = int_{-inf}^x (x - t)^2 / 2 phi(t) dt."""
    f = lambda t: 0.5 * (x - t) ** 2 * pdf(t)
    return _split_quad(f, x)


def _split_quad(f, x: float) -> float:
    kw = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    cut = min(x, 0.0)
    total = integrate.quad(f, -np.inf, cut, **kw)[0]
    if x > cut:
        total += integrate.quad(f, cut, x, **kw)[0]
    return total


def reduced_critical_ratio(alpha: float) -> float:
    """Unregularized critical ratio from the limit q0 -> inf of the stationarity conditions.

    With u = eps/sqrt(q0) and h = delta/sqrt(q0) the surviving conditions are
    ``D0 = h^2 - 2J`` and ``alpha h = D1`` with ``r_c = D0``, where
    D0 = Phi(u+h) - Phi(u), D1 = int_u^{u+h} Phi and J = int_u^{u+h} (t-u) Phi(t) dt.
    """

    kw = dict(epsabs=0.0, epsrel=1e-13, limit=200)

    def parts(u, h):
        d0 = norm.cdf(u + h) - norm.cdf(u)
        d1 = integrate.quad(norm.cdf, u, u + h, **kw)[0]
        j = integrate.quad(lambda t: (t - u) * norm.cdf(t), u, u + h, **kw)[0]
        return d0, d1, j

    def u_of(h):
        # D1/h is the mean of Phi over [u, u+h]: increasing in u from 0 to 1.
        return optimize.brentq(lambda u: parts(u, h)[1] - alpha * h, -60.0, 60.0, xtol=1e-15, rtol=4e-15)

    def gap(h):
        d0, _, j = parts(u_of(h), h)
        return d0 - (h * h - 2 * j)

    hs = np.geomspace(1e-2, 50.0, 60)
    vals = [gap(h) for h in hs]
    k = next(i for i in range(len(hs) - 1) if vals[i] * vals[i + 1] < 0)
    h = optimize.brentq(gap, hs[k], hs[k + 1], xtol=1e-15, rtol=4e-15)
    return parts(u_of(h), h)[0]


@pytest.fixture(scope="session")
def unit_model():
    return MarketModel(0.975, 0.3)


@pytest.fixture(scope="session")
def no_short():
    return Regularizer.no_short()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
