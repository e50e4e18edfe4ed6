"""
Tests for the mergeable Monte Carlo accumulators.
"""

import math

import numpy as np
import pytest

from mbpre.accumulators import (
    Estimate,
    EstimatorAccumulator,
    ExactSum,
    combined_stderr,
    merge_all,
    ratio_estimate,
)
from mbpre.exceptions import DomainError


def test_exact_sum_is_order_independent():
    """Summing in any order gives the same bits."""
    rng = np.random.default_rng(3)
    values = rng.standard_normal(1000) * 10.0 ** rng.integers(-20, 20, 1000)
    forward, backward = ExactSum(), ExactSum()
    forward.add(values)
    backward.add(values[::-1])
    assert forward == backward
    assert forward.value == math.fsum(values)


def test_exact_sum_rejects_non_finite():
    with pytest.raises(DomainError):
        ExactSum().add(np.array([1.0, np.inf]))


def test_estimate_within():
    estimate = Estimate(1.0, 0.1, 100)
    assert estimate.within(1.25)
    assert not estimate.within(1.5)
    assert estimate.within(1.5, floor=0.3)


def test_combined_stderr():
    assert combined_stderr(Estimate(0, 3.0), Estimate(0, 4.0)) == pytest.approx(5.0)


def test_ratio_estimate():
    ratio = ratio_estimate(Estimate(2.0, 0.0, 10), Estimate(4.0, 0.4, 20))
    assert ratio.value == pytest.approx(0.5)
    assert ratio.stderr == pytest.approx(0.05)
    assert ratio.count == 10
    assert math.isnan(ratio_estimate(Estimate(1.0, 0.1), Estimate(0.0, 0.1)).value)


def test_accumulator_mean_and_stderr():
    acc = EstimatorAccumulator()
    acc.add({"x": np.array([1.0, 2.0, 3.0, 4.0])})
    assert acc.count == 4
    assert acc.mean("x") == pytest.approx(2.5)
    assert acc.variance("x") == pytest.approx(np.var([1, 2, 3, 4], ddof=1))
    assert acc.stderr("x") == pytest.approx(math.sqrt(np.var([1, 2, 3, 4], ddof=1) / 4))
    assert acc.estimate("x", scale=2.0).value == pytest.approx(5.0)


def test_accumulator_rejects_mismatched_batches():
    acc = EstimatorAccumulator()
    with pytest.raises(DomainError):
        acc.add({"a": np.ones(3), "b": np.ones(2)})
    acc.add({"a": np.ones(3)})
    with pytest.raises(DomainError):
        acc.add({"b": np.ones(3)})


def test_merge_is_grouping_independent():
    """Merged accumulators are bit-identical for any split of the replicas."""
    rng = np.random.default_rng(5)
    values = rng.random(300)

    whole = EstimatorAccumulator()
    whole.add({"x": values})

    parts = []
    for chunk in np.array_split(values, 7):
        part = EstimatorAccumulator()
        part.add({"x": chunk})
        parts.append(part)
    merged = merge_all(parts)

    assert merged.count == whole.count
    assert merged.sums["x"] == whole.sums["x"]
    assert merged.mean("x") == whole.mean("x")
    assert merged.stderr("x") == whole.stderr("x")


def test_ratio_needs_pair():
    """Ratio standard errors need the recorded product sums."""
    acc = EstimatorAccumulator()
    acc.add({"num": np.array([1.0, 2.0, 3.0]), "den": np.array([2.0, 4.0, 6.0])})
    with pytest.raises(KeyError):
        acc.ratio("num", "den")

    paired = EstimatorAccumulator()
    paired.add(
        {"num": np.array([1.0, 2.0, 3.0]), "den": np.array([2.0, 4.0, 6.0])},
        pairs=[("num", "den")],
    )
    ratio = paired.ratio("num", "den")
    assert ratio.value == pytest.approx(0.5)
    assert ratio.stderr == pytest.approx(0.0, abs=1e-12)


def test_unknown_channel():
    acc = EstimatorAccumulator()
    acc.add({"x": np.ones(2)})
    with pytest.raises(KeyError):
        acc.mean("y")


def test_counters_tallies_and_maxima_merge():
    a, b = EstimatorAccumulator(), EstimatorAccumulator()
    a.counters["clamped"] += 2
    b.counters["clamped"] += 3
    a.add_tally([(0, 1), (0, 1)])
    b.add_tally([(0, 1)])
    a.note_max("gap", 0.1)
    b.note_max("gap", 0.4)
    merged = a.merge(b)
    assert merged.counters["clamped"] == 5
    assert merged.tallies[(0, 1)] == 3
    assert merged.maxima["gap"] == pytest.approx(0.4)
