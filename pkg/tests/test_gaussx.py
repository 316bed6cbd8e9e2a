import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from conftest import quad_psi, quad_w
from esreplica.gaussx import (
    DEEP_TAIL,
    Phi,
    Psi,
    W,
    g_piecewise,
    gauss_family,
    interval_integrals,
    phi,
    phi_inverse,
)


def test_values_at_zero():
    dens, big_phi, big_psi, big_w = gauss_family(0.0)
    assert dens == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-16)
    assert big_phi == 0.5
    assert big_psi == pytest.approx(0.3989422804014327, abs=1e-15)
    assert big_w == pytest.approx(0.25, abs=1e-16)


def test_reflection_identities():
    x = np.linspace(-10, 10, 1001)
    _, p, s, w = gauss_family(x)
    _, pm, sm, wm = gauss_family(-x)
    assert np.max(np.abs(p + pm - 1)) <= 1e-15
    assert np.max(np.abs(s - sm - x)) <= 1e-12
    assert np.max(np.abs(w + wm - 0.5 * (x * x + 1))) <= 1e-12


def test_w_identity():
    x = np.linspace(-10, 10, 1001)
    _, p, s, w = gauss_family(x)
    assert np.max(np.abs(w - 0.5 * x * s - 0.5 * p)) <= 1e-12


@pytest.mark.parametrize("x", [-9.0, -3.0, -0.7, 0.0, 0.4, 3.0, 8.5])
def test_against_quadrature(x):
    assert Phi(x) == pytest.approx(norm.cdf(x), rel=1e-13, abs=1e-300)
    assert Psi(x) == pytest.approx(quad_psi(x), rel=1e-12, abs=1e-300)
    assert W(x) == pytest.approx(quad_w(x), rel=1e-12, abs=1e-300)


def test_lower_tail_keeps_relative_accuracy():
    x = -25.0
    assert Phi(x) == pytest.approx(norm.cdf(x), rel=1e-12)
    # Psi(x) ~ phi(x)/x^2 and W(x) ~ phi(x)/x^3 in the lower tail.
    assert Psi(x) == pytest.approx(quad_psi(x), rel=1e-10)
    assert W(x) == pytest.approx(quad_w(x), rel=1e-10)


def test_deep_tail_is_exact_zero_without_warnings():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        vals = gauss_family(np.array([DEEP_TAIL, -1e3, -1e300]))
    for v in vals[1:]:
        assert np.all(v == 0.0)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        _, p, s, w = gauss_family(np.array([1e3, 1e150]))
    assert np.all(p == 1.0)
    assert s[0] == 1e3


def test_monotone_and_nonnegative():
    x = np.linspace(-40, 12, 5001)
    _, p, s, w = gauss_family(x)
    for v in (p, s, w):
        assert np.all(v >= 0)
        assert np.all(np.diff(v) >= 0)


def test_scalar_and_array_agree():
    x = np.array([-2.0, 0.3, 5.0])
    arr = gauss_family(x)
    for k, xv in enumerate(x):
        scal = gauss_family(float(xv))
        assert all(isinstance(v, float) for v in scal)
        assert [a[k] for a in arr] == list(scal)
    assert isinstance(phi(0.2), float)


@pytest.mark.parametrize("p", [1e-300, 1e-12, 0.025, 0.3, 0.5, 0.8, 0.975, 1 - 1e-12])
def test_phi_inverse_round_trip(p):
    x = phi_inverse(p)
    if p <= 0.5:
        assert Phi(x) == pytest.approx(p, rel=1e-14)
    else:
        assert 1 - Phi(x) == pytest.approx(1 - p, rel=1e-10)


def test_phi_inverse_known_value():
    assert phi_inverse(0.975) == pytest.approx(1.959963984540054, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_phi_inverse_domain(p):
    with pytest.raises(ValueError):
        phi_inverse(p)


def test_g_piecewise():
    x = np.array([-3.0, -1.0, -0.5, 0.0, 2.0])
    assert np.allclose(g_piecewise(x), [5.0, 1.0, 0.25, 0.0, 0.0])
    # Continuous with continuous derivative at -1.
    h = 1e-7
    assert (g_piecewise(-1 + h) - g_piecewise(-1 - h)) / (2 * h) == pytest.approx(-2.0, rel=1e-6)


@pytest.mark.parametrize("u,h", [(1.9, 1e-9), (1.9, 1e-3), (-2.0, 0.5), (0.3, 7.9), (-5.0, 30.0), (20.0, 3.0)])
def test_interval_integrals(u, h):
    d0, d1, j = interval_integrals(u, h)
    # Integrate in the offset o = t - u over [0, h] so the oracle sees the exact width.
    kw = dict(epsabs=0, epsrel=1e-13)
    ref_d1 = integrate.quad(lambda o: norm.cdf(u + o), 0, h, **kw)[0]
    ref_j = integrate.quad(lambda o: o * norm.cdf(u + o), 0, h, **kw)[0]
    if u > 0 and h > 1:
        ref_d0 = norm.sf(u) - norm.sf(u + h)
    else:
        ref_d0 = integrate.quad(lambda o: norm.pdf(u + o), 0, h, **kw)[0]
    assert d0 == pytest.approx(ref_d0, rel=1e-12, abs=1e-300)
    assert d1 == pytest.approx(ref_d1, rel=1e-12)
    assert j == pytest.approx(ref_j, rel=1e-11)


def test_interval_integrals_small_h_scaling():
    # D0 ~ phi(u) h, D1 ~ Phi(u) h, J ~ Phi(u) h^2 / 2 without cancellation loss.
    u, h = 1.0, 1e-10
    d0, d1, j = interval_integrals(u, h)
    assert d0 / h == pytest.approx(norm.pdf(u), rel=1e-9)
    assert d1 / h == pytest.approx(norm.cdf(u), rel=1e-9)
    assert j / (0.5 * h * h) == pytest.approx(norm.cdf(u), rel=1e-9)


def test_interval_integrals_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        interval_integrals(0.0, 0.0)
