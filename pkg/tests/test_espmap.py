import math

import numpy as np
import pytest

from esreplica.espmap import (
    NoRoot,
    a_combinations,
    effective_solution,
    map_from_effective,
    map_to_effective,
    regularized_ratio,
)
from esreplica.gaussx import Phi, Psi, W
from esreplica.portfolio_stats import condensate_density
from esreplica.replica_core import MarketModel, Regularizer, free_energy, saddle_residuals
from esreplica.saddle_solver import critical_point, solve_saddle


def _rel(a, b):
    return max(abs(x - y) / abs(y) for x, y in zip(a, b))


@pytest.fixture(scope="module")
def no_short_06():
    return solve_saddle(MarketModel(0.975, 0.6), Regularizer.no_short())


@pytest.mark.parametrize("lam,s", [(0.3, 0.5), (2.0, 0.1), (0.01, 3.0)])
def test_combinations_without_regularizer(lam, s):
    f = a_combinations(lam, s, Regularizer())
    z = lam / s
    assert f.z == z
    assert f.a_psi == pytest.approx(z, rel=1e-12)
    assert f.a_phi == pytest.approx(1.0, abs=1e-15)
    assert f.a_w == pytest.approx(0.5 * (z * z + 1), rel=1e-12)
    assert f.gap == pytest.approx(z * z, rel=1e-9)


def test_combinations_no_short():
    f = a_combinations(0.3, 0.5, Regularizer.no_short())
    z = 0.6
    assert (f.a_psi, f.a_phi, f.a_w) == (Psi(z), Phi(z), W(z))
    assert f.gap == pytest.approx(z * Psi(z), rel=1e-13)


def test_combinations_reject_bad_scale():
    with pytest.raises(ValueError):
        a_combinations(0.3, 0.0, Regularizer())


def test_unregularized_map_is_identity():
    sol = solve_saddle(MarketModel(0.9, 0.3), Regularizer())
    eff, r_eff = map_to_effective(sol)
    assert r_eff == pytest.approx(0.3, rel=1e-15)
    assert np.allclose(eff.as_tuple(), sol.params.as_tuple(), rtol=1e-12)


def test_no_short_round_trip(no_short_06):
    sol = no_short_06
    eff = effective_solution(sol)
    assert eff.residual_norm <= 1e-8
    assert eff.model.r == pytest.approx((1 - sol.n0) * 0.6, rel=1e-14)
    back = map_from_effective(eff, Regularizer.no_short(), 0.6)
    assert _rel(back.as_tuple(), sol.params.as_tuple()) <= 1e-8
    free = map_from_effective(eff, Regularizer.no_short())
    assert _rel(free.as_tuple(), sol.params.as_tuple()) <= 1e-8
    assert regularized_ratio(eff, Regularizer.no_short()) == pytest.approx(0.6, rel=1e-8)


def test_no_short_q0_factor(no_short_06):
    p = no_short_06.params
    eff, _ = map_to_effective(no_short_06)
    z = p.lam / p.s
    assert p.q0 == pytest.approx(eff.q0 * z / Psi(z), rel=1e-12)


def test_effective_ratio_equals_condensate_complement():
    reg = Regularizer(0.0, 0.05)
    sol = solve_saddle(MarketModel(0.9, 0.3), reg)
    _, r_eff = map_to_effective(sol)
    assert r_eff == (1 - condensate_density(sol.params, sol.model, reg)) * sol.model.r


def test_mapping_with_long_penalty():
    reg = Regularizer(0.02, 0.1)
    sol = solve_saddle(MarketModel(0.9, 0.3), reg)
    eff = effective_solution(sol)
    assert eff.residual_norm <= 1e-8
    back = map_from_effective(eff, reg, 0.3)
    assert _rel(back.as_tuple(), sol.params.as_tuple()) <= 1e-8
    res = saddle_residuals(back, sol.model, reg)
    assert np.max(np.abs(res)) <= 1e-8


def test_small_r_map_is_near_identity():
    sol = solve_saddle(MarketModel(0.975, 1e-3), Regularizer.no_short())
    eff, r_eff = map_to_effective(sol)
    assert r_eff == pytest.approx(1e-3, rel=1e-12)
    assert np.allclose(eff.as_tuple(), sol.params.as_tuple(), rtol=1e-9)


def test_critical_point_maps_to_twice_the_ratio():
    r_c, crit = critical_point(MarketModel(0.8, 0.1))
    p = map_from_effective(crit, Regularizer.no_short())
    r_reg = regularized_ratio(crit, Regularizer.no_short())
    # The effective q0 is huge while the mapped one stays of order one.
    assert crit.params.q0 > 1e7
    assert 1.0 < p.q0 < 10.0
    assert r_reg == pytest.approx(2 * r_c, rel=1e-6)
    assert all(math.isfinite(v) for v in p.as_tuple())


def test_free_energy_is_not_invariant(no_short_06):
    eff = effective_solution(no_short_06)
    f_mapped = free_energy(eff.params, eff.model, Regularizer.no_short())
    assert abs(f_mapped - no_short_06.free_energy) > 1e-3


def test_inconsistent_pair_raises():
    eff = solve_saddle(MarketModel(0.9, 0.2), Regularizer())
    with pytest.raises(NoRoot):
        map_from_effective(eff, Regularizer.no_short(), 0.1)
    with pytest.raises(NoRoot):
        map_from_effective(eff, Regularizer(0.0, 0.05), 0.3)


def test_rejects_regularized_or_heterogeneous_input():
    sol = solve_saddle(MarketModel(0.9, 0.2), Regularizer(0.0, 0.1))
    with pytest.raises(ValueError):
        map_from_effective(sol, Regularizer.no_short())
    two = solve_saddle(MarketModel(0.9, 0.2, ((1.0, 0.5), (2.0, 0.5))), Regularizer.no_short())
    with pytest.raises(ValueError, match="unit volatilities"):
        map_to_effective(two)
