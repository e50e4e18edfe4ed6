"""
Mergeable Monte Carlo accumulators.

Sums are kept exactly: every float is an integer multiple of 2**-1074, so a
running total can live in a Python int and addition becomes associative and
commutative.  Merging shard accumulators therefore gives bit-identical results
for any grouping or order of shards, and rounding happens once when a mean or
variance is read out.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainError

# x * 2**_SHIFT is an integer for every finite double x
_SHIFT = 1074
_SCALE = 1 << _SHIFT
_SPLIT = 27
_LOW_MASK = (1 << _SPLIT) - 1


def _exact_int(values: np.ndarray) -> int:
    """Exact sum of a float array, scaled by 2**1074."""
    values = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise DomainError("cannot accumulate non-finite values")
    mantissa, exponent = np.frexp(values)
    ints = (mantissa * 2.0**53).astype(np.int64)
    keep = ints != 0
    ints, exponent = ints[keep], exponent[keep]
    if not ints.size:
        return 0

    # Group by exponent; split mantissas into 26 + 27 bits so int64 sums stay exact
    order = np.argsort(exponent, kind="stable")
    ints, exponent = ints[order], exponent[order]
    starts = np.flatnonzero(np.r_[True, exponent[1:] != exponent[:-1]])
    high = np.add.reduceat(ints >> _SPLIT, starts).tolist()
    low = np.add.reduceat(ints & _LOW_MASK, starts).tolist()
    total = 0
    for h, lo, e in zip(high, low, exponent[starts].tolist()):
        group = (h << _SPLIT) + lo
        shift = e - 53 + _SHIFT
        total += group << shift if shift >= 0 else group >> -shift
    return total


class ExactSum:
    """Order-independent exact sum of doubles."""

    __slots__ = ("_total",)

    def __init__(self, total: int = 0) -> None:
        self._total = total

    def add(self, values: np.ndarray) -> None:
        self._total += _exact_int(np.asarray(values))

    def merge(self, other: "ExactSum") -> "ExactSum":
        return ExactSum(self._total + other._total)

    @property
    def value(self) -> float:
        return float(Fraction(self._total, _SCALE))

    def fraction(self) -> Fraction:
        return Fraction(self._total, _SCALE)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ExactSum) and other._total == self._total

    def __repr__(self) -> str:
        return f"ExactSum({self.value!r})"


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo mean with its normal-approximation standard error."""

    value: float
    stderr: float
    count: int = 0

    def within(self, target: float, sigmas: float = 3.0, floor: float = 0.0) -> bool:
        """Whether target lies within sigmas standard errors (plus floor)."""
        return abs(self.value - target) <= sigmas * self.stderr + floor

    def to_dict(self) -> Dict[str, float]:
        return {"value": self.value, "stderr": self.stderr, "count": self.count}


def combined_stderr(*estimates: Estimate) -> float:
    """Standard error of a difference of independent estimates."""
    return math.sqrt(sum(e.stderr**2 for e in estimates))


def ratio_estimate(num: Estimate, den: Estimate) -> Estimate:
    """Ratio of two independent estimates with a first-order standard error."""
    if den.value == 0:
        return Estimate(float("nan"), float("nan"), min(num.count, den.count))
    value = num.value / den.value
    rel = 0.0
    if num.value != 0:
        rel += (num.stderr / num.value) ** 2
    rel += (den.stderr / den.value) ** 2
    return Estimate(value, abs(value) * math.sqrt(rel), min(num.count, den.count))


@dataclass
class EstimatorAccumulator:
    """
    Mergeable sums for a family of named per-replica channels.

    Attributes:
        count: Number of replicas seen
        sums: Exact sum per channel
        cross: Exact sums of products for (a, b) channel pairs; (a, a) holds
            the sum of squares
        tallies: Integer counts per bin
        counters: Integer diagnostic counters (clamp events and the like)
        maxima: Largest value seen per diagnostic
        seeds: Entropy/spawn keys of the shards merged into this accumulator
    """

    count: int = 0
    sums: Dict[str, ExactSum] = field(default_factory=dict)
    cross: Dict[Tuple[str, str], ExactSum] = field(default_factory=dict)
    tallies: Counter = field(default_factory=Counter)
    counters: Counter = field(default_factory=Counter)
    maxima: Dict[str, float] = field(default_factory=dict)
    seeds: List[Tuple[int, ...]] = field(default_factory=list)

    def add(
        self,
        channels: Mapping[str, np.ndarray],
        pairs: Iterable[Tuple[str, str]] = (),
    ) -> None:
        """
        Add one batch of replicas.

        Args:
            channels: Per-replica values, every array of the same length
            pairs: Extra channel pairs whose product sums are needed for
                ratio standard errors
        """
        lengths = {np.asarray(values).size for values in channels.values()}
        if len(lengths) > 1:
            raise DomainError(f"channel lengths differ: {sorted(lengths)}")
        size = lengths.pop() if lengths else 0
        if self.count and channels and set(channels) != set(self.sums):
            raise DomainError("channel names changed between batches")

        for name, values in channels.items():
            arr = np.asarray(values, dtype=np.float64)
            self.sums.setdefault(name, ExactSum()).add(arr)
            self.cross.setdefault((name, name), ExactSum()).add(arr * arr)
        for a, b in pairs:
            key = (a, b) if a <= b else (b, a)
            if key[0] == key[1]:
                continue
            product = np.asarray(channels[a], dtype=np.float64) * np.asarray(
                channels[b], dtype=np.float64
            )
            self.cross.setdefault(key, ExactSum()).add(product)
        self.count += size

    def add_tally(self, keys: Iterable) -> None:
        self.tallies.update(keys)

    def note_max(self, name: str, value: float) -> None:
        if name not in self.maxima or value > self.maxima[name]:
            self.maxima[name] = float(value)

    def merge(self, other: "EstimatorAccumulator") -> "EstimatorAccumulator":
        """Return a new accumulator holding both sets of replicas."""
        merged = EstimatorAccumulator(count=self.count + other.count)
        for source in (self, other):
            for name, total in source.sums.items():
                merged.sums[name] = merged.sums.get(name, ExactSum()).merge(total)
            for key, total in source.cross.items():
                merged.cross[key] = merged.cross.get(key, ExactSum()).merge(total)
            merged.tallies.update(source.tallies)
            merged.counters.update(source.counters)
            for name, value in source.maxima.items():
                merged.note_max(name, value)
        merged.seeds = self.seeds + other.seeds
        return merged

    def _require(self, name: str) -> ExactSum:
        if name not in self.sums:
            raise KeyError(f"unknown channel {name!r}")
        return self.sums[name]

    def mean(self, name: str) -> float:
        if self.count == 0:
            return float("nan")
        return float(self._require(name).fraction() / self.count)

    def covariance(self, a: str, b: str) -> float:
        """Unbiased sample covariance of two channels."""
        key = (a, b) if a <= b else (b, a)
        if key not in self.cross:
            raise KeyError(f"no product sums recorded for {key}")
        if self.count < 2:
            return float("nan")
        n = self.count
        sa = self._require(a).fraction()
        sb = self._require(b).fraction()
        centred = self.cross[key].fraction() - sa * sb / n
        return float(centred / (n - 1))

    def variance(self, name: str) -> float:
        return max(self.covariance(name, name), 0.0)

    def stderr(self, name: str) -> float:
        if self.count < 2:
            return float("nan")
        return math.sqrt(self.variance(name) / self.count)

    def estimate(self, name: str, scale: float = 1.0) -> Estimate:
        """Mean and standard error of a channel, optionally rescaled."""
        return Estimate(
            self.mean(name) * scale, self.stderr(name) * abs(scale), self.count
        )

    def ratio(self, num: str, den: str) -> Estimate:
        """
        Ratio of channel means with a delta-method standard error.

        Needs the (num, den) product sums, i.e. the pair passed to add().
        """
        mean_den = self.mean(den)
        if self.count < 2 or mean_den == 0:
            return Estimate(float("nan"), float("nan"), self.count)
        value = self.mean(num) / mean_den
        var = (
            self.variance(num)
            - 2 * value * self.covariance(num, den)
            + value**2 * self.variance(den)
        )
        return Estimate(
            value, math.sqrt(max(var, 0.0) / self.count) / abs(mean_den), self.count
        )

    def channels(self) -> List[str]:
        return sorted(self.sums)


def merge_all(accumulators: Sequence[EstimatorAccumulator]) -> EstimatorAccumulator:
    """Merge accumulators in the given order."""
    merged = EstimatorAccumulator()
    for acc in accumulators:
        merged = merged.merge(acc)
    return merged
