import math

import numpy as np
import pytest
from scipy import integrate, optimize
from scipy.stats import norm

from esreplica.gaussx import g_piecewise
from esreplica.replica_core import (
    NO_SHORT,
    MarketModel,
    OrderParameters,
    Regularizer,
    free_energy,
    group_sums,
    representative_weight,
    residual_jacobian,
    residual_scales,
    saddle_residuals,
)

# A generic point away from any stationary point.
P = OrderParameters(lam=0.3, epsilon=0.7, q0=2.1, delta=3.0, q0hat=-0.045, deltahat=0.11)
REGS = [Regularizer(), Regularizer(0.0, 0.05), Regularizer(0.02, 0.3), Regularizer.no_short(), Regularizer.no_short(0.04)]
MODELS = [MarketModel(0.975, 0.3), MarketModel(0.9, 0.6, ((1.0, 0.3), (2.0, 0.7)))]


def min_potential(z, sigma, p, reg):
    """min over w of the single-asset potential, by bounded scalar minimization."""
    s = math.sqrt(-2 * p.q0hat)

    def v(w):
        pen = reg.eta_plus * w if w > 0 else (-reg.eta_minus * w if w < 0 else 0.0)
        return p.deltahat * sigma**2 * w * w - p.lam * w - z * w * sigma * s + pen

    # The minimizer lies within |lam + sigma s z| / (2 deltahat sigma^2) of zero.
    span = (abs(p.lam) + sigma * s * abs(z)) / (2 * p.deltahat * sigma**2) + 1.0
    lo = 0.0 if math.isinf(reg.eta_minus) else -span
    res = optimize.minimize_scalar(v, bounds=(lo, span), method="bounded", options={"xatol": 1e-12})
    return min(res.fun, v(0.0))


def free_energy_oracle(p, model, reg):
    r, alpha = model.r, model.alpha
    kw = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
    avg = 0.0
    for sigma, frac in model.sigma_groups:
        avg += frac * integrate.quad(lambda z: norm.pdf(z) * min_potential(z, sigma, p, reg), -12, 12, **kw)[0]
    c = math.sqrt(2 * p.q0 / p.delta**2)
    g_int = integrate.quad(lambda s: math.exp(-s * s) * g_piecewise(p.epsilon / p.delta + s * c), -30, 30, **kw)[0]
    return (p.lam + (1 - alpha) * p.epsilon / r - p.delta * p.q0hat - p.deltahat * p.q0 + avg
            + p.delta / (2 * r * math.sqrt(math.pi)) * g_int)


@pytest.mark.parametrize("reg", REGS)
def test_free_energy_matches_direct_averages(reg):
    model = MODELS[0]
    assert free_energy(P, model, reg) == pytest.approx(free_energy_oracle(P, model, reg), rel=1e-8, abs=1e-9)


def test_free_energy_matches_direct_averages_two_groups():
    model, reg = MODELS[1], REGS[2]
    assert free_energy(P, model, reg) == pytest.approx(free_energy_oracle(P, model, reg), rel=1e-8, abs=1e-9)


def _fd_gradient(p, model, reg):
    names = ["lam", "q0hat", "deltahat", "q0", "epsilon", "delta"]
    grad = []
    for name in names:
        x0 = getattr(p, name)
        h = 1e-5 * max(1.0, abs(x0))
        vals = []
        for sgn in (-2, -1, 1, 2):
            d = {k: getattr(p, k) for k in ("lam", "epsilon", "q0", "delta", "q0hat", "deltahat")}
            d[name] = x0 + sgn * h
            vals.append(free_energy(OrderParameters(**d), model, reg))
        grad.append((vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h))
    return np.array(grad)


@pytest.mark.parametrize("reg", REGS)
@pytest.mark.parametrize("model", MODELS)
def test_residuals_are_scaled_gradient(model, reg):
    res = saddle_residuals(P, model, reg)
    grad = _fd_gradient(P, model, reg)
    assert np.allclose(res, residual_scales(P, model) * grad, rtol=1e-6, atol=1e-7)


def _log_point(p):
    return np.array([p.lam, p.epsilon, math.log(p.q0), math.log(p.delta), math.log(p.s), math.log(p.deltahat)])


def _from_log(x):
    s = math.exp(x[4])
    return OrderParameters(x[0], x[1], math.exp(x[2]), math.exp(x[3]), -0.5 * s * s, math.exp(x[5]))


@pytest.mark.parametrize("reg", REGS)
@pytest.mark.parametrize("model", MODELS)
def test_jacobian_matches_finite_differences(model, reg):
    x = _log_point(P)
    jac = residual_jacobian(P, model, reg)
    fd = np.zeros((6, 6))
    for k in range(6):
        h = 1e-6
        e = np.zeros(6)
        e[k] = h
        fd[:, k] = (saddle_residuals(_from_log(x + e), model, reg) - saddle_residuals(_from_log(x - e), model, reg)) / (2 * h)
    assert np.allclose(jac, fd, rtol=1e-6, atol=1e-8)


def test_no_short_is_limit_of_large_short_penalty():
    model = MODELS[0]
    a = saddle_residuals(P, model, Regularizer.no_short())
    b = saddle_residuals(P, model, Regularizer(0.0, 1e4))
    assert np.allclose(a, b, atol=1e-12)


def test_group_duplication_is_invisible():
    single = MarketModel(0.975, 0.3, ((1.5, 1.0),))
    split = MarketModel(0.975, 0.3, ((1.5, 0.25), (1.5, 0.75)))
    for reg in REGS:
        assert np.allclose(saddle_residuals(P, single, reg), saddle_residuals(P, split, reg), atol=1e-14)
        assert free_energy(P, single, reg) == pytest.approx(free_energy(P, split, reg), abs=1e-13)


def test_representative_weight_minimizes_potential():
    reg = Regularizer(0.02, 0.3)
    for z in np.linspace(-4, 4, 17):
        w = representative_weight(z, 1.3, P, reg)
        s = P.s
        v = lambda u: (P.deltahat * 1.69 * u * u - P.lam * u - z * u * 1.3 * s
                       + (reg.eta_plus * u if u > 0 else -reg.eta_minus * u))
        assert v(w) == pytest.approx(min_potential(z, 1.3, P, reg), abs=1e-10)


def test_representative_weight_no_short_is_nonnegative():
    z = np.linspace(-6, 6, 101)
    assert np.all(representative_weight(z, 1.0, P, Regularizer.no_short()) >= 0)


def test_group_sums_phi_counts_nonzero_weights():
    reg = Regularizer(0.02, 0.3)
    model = MODELS[1]
    sums = group_sums(P, model, reg)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(400_000)
    frac_nonzero = sum(f * np.mean(representative_weight(z, sig, P, reg) != 0) for sig, f in model.sigma_groups)
    assert sums["phi"] == pytest.approx(frac_nonzero, abs=3e-3)


@pytest.mark.parametrize("kwargs", [
    dict(alpha=0.5, r=0.1), dict(alpha=1.0, r=0.1), dict(alpha=0.9, r=0.0), dict(alpha=0.9, r=float("inf")),
    dict(alpha=0.9, r=0.1, sigma_groups=((1.0, 0.5),)), dict(alpha=0.9, r=0.1, sigma_groups=((0.0, 1.0),)),
    dict(alpha=0.9, r=0.1, sigma_groups=()),
])
def test_market_model_validation(kwargs):
    with pytest.raises(ValueError):
        MarketModel(**kwargs)


@pytest.mark.parametrize("args", [(-0.1, 0.0), (float("inf"), 0.0), (0.0, -1.0), (0.0, float("nan"))])
def test_regularizer_validation(args):
    with pytest.raises(ValueError):
        Regularizer(*args)


def test_regularizer_shift_and_flags():
    reg = Regularizer(0.1, 0.2)
    shifted = reg.shifted()
    assert shifted.eta_plus == 0.0 and shifted.eta_minus == pytest.approx(0.3)
    assert Regularizer.no_short().is_no_short and Regularizer.no_short().eta_minus == NO_SHORT
    assert Regularizer().is_zero and not reg.is_zero


@pytest.mark.parametrize("field,value", [("q0", -1.0), ("q0hat", 0.1), ("delta", 0.0), ("deltahat", -2.0)])
def test_domain_errors(field, value):
    d = {k: getattr(P, k) for k in ("lam", "epsilon", "q0", "delta", "q0hat", "deltahat")}
    d[field] = value
    with pytest.raises(ValueError, match=field):
        saddle_residuals(OrderParameters(**d), MODELS[0], Regularizer())


def test_order_parameter_dict_round_trip():
    assert OrderParameters.from_dict(P.as_dict()) == P
    assert P.as_dict()["lambda"] == P.lam
