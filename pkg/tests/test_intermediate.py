"""
Tests for the intermediately supercritical estimators.
"""

import numpy as np
import pytest

from mbpre.exceptions import (
    ConfigError,
    MissingRenewalTableError,
    RegimeMismatchError,
    TailNotConvergedError,
)
from mbpre.intermediate import (
    conditional_law_at_minimum,
    estimate_interm_delta,
    estimate_q,
    k_independence,
    verify_interm_ratio,
)
from mbpre.limits import INSUFFICIENT_GRID, Horizons, multinomial_weight
from mbpre.walks import renewal_function

SMALL_HORIZONS = Horizons(k_max=4, window=1, n_inner=8, n_infty=8)


@pytest.fixture
def renewal(interm_model):
    return renewal_function(interm_model, [0.0, 0.5, 1.0, 1.5, 2.0], 200, 1000, seed=3)


@pytest.fixture
def delta(interm_model, renewal, small_pool):
    return estimate_interm_delta(
        interm_model, 0, 200, renewal, SMALL_HORIZONS, z_max=2, seed=4,
        pool=small_pool, tail_bound=1.0,
    )


def test_delta_constants(delta):
    """Delta_i(z) = C(z, v) Delta_hat_i and the unit entries scale by v_l / |v|^2."""
    v = np.ones(2)
    assert delta.delta_hat.value > 0
    for z, est in delta.delta.items():
        expected = multinomial_weight(z, v) * delta.delta_hat.value
        assert est.value == pytest.approx(expected)
    for l in range(2):
        assert delta.delta_unit[l].value == pytest.approx(delta.delta_hat.value / 4)
        assert delta.delta_unit_alt[l].value == pytest.approx(4 * delta.delta_hat.value)
        assert delta.delta_unit[l].value == pytest.approx(delta.delta[(1, 0)].value)


def test_delta_terms(delta):
    """The first new minimum is at k = 0 with probability one."""
    assert delta.newmin_weights[0] == 1.0
    assert all(0.0 <= w <= 1.0 for w in delta.newmin_weights)
    assert sum(delta.terms) == pytest.approx(delta.delta_hat.value)
    assert len(delta.terms) == SMALL_HORIZONS.k_max + 1


def test_delta_records(delta):
    quantities = {r["quantity"] for r in delta.to_records()}
    expected = {"delta_hat", "Delta", "Delta_unit", "Delta_unit_alt", "delta_term"}
    assert expected <= quantities


def test_delta_tail_check(interm_model, renewal, small_pool):
    with pytest.raises(TailNotConvergedError):
        estimate_interm_delta(
            interm_model, 0, 200, renewal, SMALL_HORIZONS, seed=4, pool=small_pool,
            tail_bound=1e-12,
        )


def test_delta_needs_renewal_table(interm_model):
    with pytest.raises(MissingRenewalTableError):
        estimate_interm_delta(interm_model, 0, 10, None)


def test_delta_regime_guard(strong_model, renewal):
    with pytest.raises(RegimeMismatchError):
        estimate_interm_delta(strong_model, 0, 10, renewal)


def test_interm_ratio(interm_model, delta, small_pool):
    """Ratios are positive and carry the Delta references."""
    table = verify_interm_ratio(
        interm_model, 0, [1, (1, 0)], [4, 8], 400, seed=5, pool=small_pool,
        constants=delta,
    )
    assert table.events() == ["Z=(1,0)", "|Z|=1"]
    for row in table.rows:
        assert row.estimate.value > 0
    assert table.last("|Z|=1").reference == pytest.approx(delta.delta_hat.value / 2)
    assert table.last("Z=(1,0)").reference == pytest.approx(delta.delta_hat.value / 4)


def test_interm_ratio_single_n(interm_model, small_pool):
    """A single n cannot show stabilization."""
    table = verify_interm_ratio(interm_model, 0, [1], [4], 200, seed=5, pool=small_pool)
    assert table.stabilization("|Z|=1", 0.1) == INSUFFICIENT_GRID


def test_interm_ratio_regime_guard(strong_model, small_pool):
    with pytest.raises(RegimeMismatchError):
        verify_interm_ratio(strong_model, 0, [1], [4], 10, pool=small_pool)


def test_estimate_q(interm_model, renewal, small_pool):
    q = estimate_q(interm_model, 2, 6, 400, renewal, seed=6, pool=small_pool)
    v = np.ones(2)
    assert all(est.value >= 0 for est in q.q_dist.values())
    for z, est in q.T_hat.items():
        expected = q.q_dist[z].value / (2 * multinomial_weight(z, v))
        assert est.value == pytest.approx(expected)
    assert q.plus_mass.value > 0
    assert q.q_enumerated() + q.q_tail.value == pytest.approx(q.q_total.value, rel=1e-9)
    assert {r["quantity"] for r in q.to_records()} >= {"q", "T", "plus_mass"}


def test_estimate_q_needs_table(interm_model):
    with pytest.raises(MissingRenewalTableError):
        estimate_q(interm_model, 2, 6, 10, None)


def test_law_at_minimum(interm_model, renewal, small_pool):
    q = estimate_q(interm_model, 2, 6, 200, renewal, seed=6, pool=small_pool)
    laws = conditional_law_at_minimum(
        interm_model, 0, 1, 0.5, [6], 2, 300, seed=7, pool=small_pool, reference=q
    )
    law = laws[0]
    assert law.n == 6
    assert 0.0 < law.enumerated.value <= 1.0 + 1e-9
    assert set(law.reference) == set(law.table)


def test_law_at_minimum_validation(interm_model):
    with pytest.raises(ConfigError):
        conditional_law_at_minimum(interm_model, 0, 1, 0.0, [6], 2, 10)


def test_k_independence(interm_model, small_pool):
    by_k = k_independence(interm_model, (1, 0), 6, 400, seed=8, pool=small_pool)
    assert set(by_k) == {1, 2}
    assert by_k[1].value > 0
    assert by_k[2].value > 0


def test_k_independence_validation(interm_model):
    with pytest.raises(ConfigError):
        k_independence(interm_model, (0, 0), 6, 10)
