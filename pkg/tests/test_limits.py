"""
Tests for the machinery shared by the limit estimators.
"""

import math
from collections import Counter

import numpy as np
import pytest

from mbpre.accumulators import Estimate
from mbpre.environment import sample_paths
from mbpre.exceptions import ConfigError, DomainError
from mbpre.limits import (
    INSUFFICIENT_GRID,
    Horizons,
    RatioRow,
    RatioTable,
    backward_eigenvectors,
    check_grid,
    clamp_survival,
    compositions,
    enumerate_support,
    event_label,
    fold_capture,
    g_series,
    limit_law_integrand,
    limit_law_tail,
    limit_law_total,
    multinomial_weight,
    split_time_terms,
    unit,
)
from mbpre.linfrac import local_prob_vector


@pytest.fixture
def l0_paths(l0_model):
    return sample_paths(l0_model, np.random.default_rng(0), replicas=3, length=30)


def test_multinomial_weight():
    assert multinomial_weight((1, 0), (1.0, 1.0)) == pytest.approx(1 / 4)
    assert multinomial_weight((2, 1), (1.0, 2.0)) == pytest.approx(2 / 27)


def test_multinomial_weight_levels_sum_to_inverse_norm():
    """sum over |z| = m of C(z, v) is 1 / |v|."""
    v = (1.0, 2.0, 0.5)
    for m in range(1, 4):
        total = sum(multinomial_weight(z, v) for z in compositions(m, 3))
        assert total == pytest.approx(1 / 3.5)


def test_multinomial_weight_domain():
    with pytest.raises(DomainError):
        multinomial_weight((0, 0), (1.0, 1.0))
    with pytest.raises(DomainError):
        multinomial_weight((1, -1), (1.0, 1.0))


def test_support_enumeration():
    assert enumerate_support(2, 2) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert unit(3, 1) == (0, 1, 0)
    with pytest.raises(DomainError):
        unit(2, 2)


def test_event_labels():
    assert event_label(3) == "|Z|=3"
    assert event_label((1, 0)) == "Z=(1,0)"


def test_horizons_validation():
    assert Horizons().to_dict()["k_max"] == 200
    with pytest.raises(ConfigError):
        Horizons(k_max=0)


def test_check_grid():
    assert check_grid([8, 4, 8]) == [4, 8]
    with pytest.raises(ConfigError):
        check_grid([])
    with pytest.raises(ConfigError):
        check_grid([0, 4])


def test_backward_eigenvectors_l0(l0_paths, l0_model):
    """Every backward eigenvector of the reference environment is (1/2, 1/2)."""
    u = backward_eigenvectors(l0_paths, l0_model.v_array)
    assert u.shape == (3, 31, 2)
    np.testing.assert_allclose(u, 0.5, atol=1e-14)


def test_g_series_l0(l0_paths, l0_model):
    """G = sum_k 2^{-k} up to k_max."""
    sample = g_series(l0_paths, l0_model.v_array, k_max=20)
    np.testing.assert_allclose(sample.G, 2.0 - 2.0**-20, rtol=1e-12)
    np.testing.assert_allclose(sample.u, 0.5)
    assert sample.max_tail == pytest.approx(2.0**-20 / (2.0 - 2.0**-20))


def test_g_series_needs_long_paths(l0_paths, l0_model):
    with pytest.raises(DomainError):
        g_series(l0_paths, l0_model.v_array, k_max=30)


def test_fold_capture(l0_paths, l0_model):
    states = fold_capture(l0_paths, l0_model.v_array, [1, 2])
    assert sorted(states) == [1, 2]
    np.testing.assert_allclose(states[2].Dtilde, 0.75)
    with pytest.raises(DomainError):
        fold_capture(l0_paths, l0_model.v_array, [31])


def test_clamp_survival():
    counter = Counter()
    Q, R = clamp_survival(np.array([0.5, 1.0]), 1e-3, counter)
    np.testing.assert_allclose(Q, [0.5, 0.999])
    np.testing.assert_allclose(R, [0.5, 0.001])
    assert counter["clamped"] == 1


def test_limit_law_l0():
    """Q = R = u = 1/2: p(1, 0) = 1/8 and the whole law has mass one."""
    half = np.full((1, 2), 0.5)
    v = np.ones(2)
    assert limit_law_integrand(half, half, half, v, (1, 0))[0] == pytest.approx(1 / 8)
    assert limit_law_integrand(half, half, half, v, (1, 1))[0] == pytest.approx(1 / 8)
    assert limit_law_total(half, half, half, v)[0] == pytest.approx(1.0)
    enumerated = sum(
        limit_law_integrand(half, half, half, v, z)[0] for z in enumerate_support(2, 6)
    )
    tail = limit_law_tail(half, half, half, v, 6)[0]
    assert enumerated + tail == pytest.approx(1.0)


def test_split_time_terms_sum_to_at_most_one(l0_paths, l0_model):
    """Summing the numerators over a support never exceeds the denominator."""
    paths = sample_paths(l0_model, np.random.default_rng(1), replicas=3, length=6)
    support = enumerate_support(2, 3)
    terms = split_time_terms(paths, l0_model.v_array, 0, 1, np.full(3, 3), support)
    total = sum(terms.numerators.values())
    assert np.all(total <= terms.denominator * (1 + 1e-12))
    assert np.all(total > 0)


def test_split_at_the_ends(l0_model):
    """s = 0 and s = n reduce to indicator terms."""
    paths = sample_paths(l0_model, np.random.default_rng(2), replicas=2, length=4)
    support = [(1, 0), (0, 1)]
    terms = split_time_terms(paths, l0_model.v_array, 0, 1, np.array([0, 4]), support)
    end = fold_capture(paths, l0_model.v_array, [4])[4]
    full = np.asarray(local_prob_vector(end, 0, (0, 1), scaled=True))
    np.testing.assert_allclose(terms.numerators[(1, 0)][0], full[0])
    assert terms.numerators[(0, 1)][0] == 0.0
    np.testing.assert_allclose(terms.numerators[(0, 1)][1], full[1])
    assert terms.numerators[(1, 0)][1] == 0.0


def test_split_time_validation(l0_model):
    paths = sample_paths(l0_model, np.random.default_rng(2), replicas=2, length=4)
    with pytest.raises(DomainError):
        split_time_terms(paths, l0_model.v_array, 0, 1, np.array([0, 5]), [(1, 0)])


def test_ratio_table_stabilization():
    table = RatioTable()
    for n, value in [(10, 1.0), (20, 1.01)]:
        table.rows.append(RatioRow(n, "|Z|=1", Estimate(value, 0.0)))
    table.rows.append(RatioRow(10, "|Z|=2", Estimate(1.0, 0.0)))

    assert table.events() == ["|Z|=1", "|Z|=2"]
    assert table.last("|Z|=1").n == 20
    assert table.relative_drift("|Z|=1") == pytest.approx(0.01)
    assert table.stabilization("|Z|=1", 0.05) == "stable"
    assert table.stabilization("|Z|=1", 0.001) == "unstable"
    assert table.stabilization("|Z|=2", 0.05) == INSUFFICIENT_GRID
    assert math.isnan(table.relative_drift("|Z|=2"))


def test_ratio_row_dict():
    row = RatioRow(12, "|Z|=1", Estimate(0.25, 0.01, 100), reference=0.25)
    assert row.to_dict() == {
        "n": 12,
        "event": "|Z|=1",
        "value": 0.25,
        "stderr": 0.01,
        "count": 100,
        "reference": 0.25,
    }
