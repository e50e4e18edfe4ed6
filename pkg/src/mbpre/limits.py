"""Machinery shared by the strong and intermediate limit estimators.

Both regimes average quenched closed forms over tilted environment paths: by the
change of measure, kappa^{-n} P_{e_i}(A) = E_P[e^{S_n} P_{e_i}(A | env)], which
is what the scaled closed forms in mbpre.linfrac return.  This module holds the
pieces both regimes need: the multinomial weight C(z, v), the backward
eigenvector recursion and the series G, split-time factorizations and the
integrand of the limiting conditional laws.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .accumulators import Estimate, EstimatorAccumulator
from .environment import EnvironmentPaths, EnvModel, sample_paths
from .exceptions import ConfigError, DomainError
from .linfrac import (
    QuenchedState,
    advance,
    initial_state,
    local_prob_total,
    local_prob_vector,
    log_multinomial,
    prob_from_population,
)
from .parallel import Shard
from .series import monomials
from .walks import batch_functionals

logger = logging.getLogger("mbpre")

Event = Union[int, Tuple[int, ...]]


@dataclass(frozen=True)
class Horizons:
    """
    Truncation horizons of the limit estimators.

    Attributes:
        k_max: Last index of truncated series and sums
        window: Letters beyond k_max used to settle eigenvectors
        n_inner: Horizon of forward inner quantities
        n_infty: Horizon standing in for infinity in the intermediate sums
    """

    k_max: int = 200
    window: int = 50
    n_inner: int = 400
    n_infty: int = 400

    def __post_init__(self) -> None:
        for name in ("k_max", "window", "n_inner", "n_infty"):
            if getattr(self, name) < 1:
                raise ConfigError(f"horizon {name} must be at least 1")

    def to_dict(self) -> Dict[str, int]:
        return {
            "k_max": self.k_max,
            "window": self.window,
            "n_inner": self.n_inner,
            "n_infty": self.n_infty,
        }


def multinomial_weight(z: Sequence[int], v: Sequence[float]) -> float:
    """
    C(z, v) = |z|! / (z_1! ... z_K! |v|) * prod_r (v_r / |v|)^{z_r}.

    Raises:
        DomainError: If z = 0, z has negative entries or v is not positive
    """
    z_arr = np.asarray(z, dtype=np.int64)
    v_arr = np.asarray(v, dtype=float)
    if z_arr.shape != v_arr.shape or np.any(z_arr < 0):
        raise DomainError(
            f"z must be a nonnegative integer vector of length {v_arr.size}"
        )
    if z_arr.sum() == 0:
        raise DomainError("C(z, v) is defined for z != 0 only")
    if np.any(v_arr <= 0):
        raise DomainError("v must be strictly positive")
    total = v_arr.sum()
    log_c = log_multinomial(z_arr) - math.log(total)
    log_c += float(np.sum(z_arr * np.log(v_arr / total)))
    return math.exp(log_c)


def compositions(total: int, K: int) -> List[Tuple[int, ...]]:
    """All type vectors z with |z| = total."""
    if total < 0 or K < 1:
        raise DomainError("need total >= 0 and K >= 1")
    return list(monomials(K, total))


def enumerate_support(K: int, z_max: int) -> List[Tuple[int, ...]]:
    """All nonzero type vectors with |z| <= z_max, by increasing total."""
    return [z for m in range(1, z_max + 1) for z in compositions(m, K)]


def unit(K: int, l: int) -> Tuple[int, ...]:
    if not 0 <= l < K:
        raise DomainError(f"type index {l} out of range for K = {K}")
    return tuple(1 if r == l else 0 for r in range(K))


def event_label(event: Event) -> str:
    if isinstance(event, (int, np.integer)):
        return f"|Z|={int(event)}"
    return "Z=(" + ",".join(str(int(x)) for x in event) + ")"


def scaled_event_prob(
    state: QuenchedState, i: int, event: Event, counter: Optional[Counter] = None
) -> np.ndarray:
    """e^{S_n} P_{e_i}(event) for a total-size (int) or type-vector (tuple) event."""
    if isinstance(event, (int, np.integer)):
        return np.asarray(local_prob_total(state, i, int(event), scaled=True))
    return np.asarray(local_prob_vector(state, i, event, scaled=True, counter=counter))


def backward_eigenvectors(paths: EnvironmentPaths, v: np.ndarray) -> np.ndarray:
    """
    Finite-horizon right eigenvectors u^{(k)}, k = 1..H+1.

    Runs u^{(k)} = M_k u^{(k+1)} / rho_k down from u^{(H+1)} = 1/|v|.  Since
    v M_k = rho_k v the normalization (v, u) = 1 is preserved; it is reapplied
    anyway to keep rounding from accumulating.

    Returns:
        (N, H + 1, K) array whose slot k holds u^{(k+1)}
    """
    N, H = paths.X.shape
    K = v.size
    u = np.empty((N, H + 1, K))
    u[:, H] = 1.0 / v.sum()
    for k in range(H - 1, -1, -1):
        nxt = np.einsum("nij,nj->ni", paths.M[:, k], u[:, k + 1])
        nxt = nxt / np.exp(paths.X[:, k])[:, None]
        u[:, k] = nxt / (nxt @ v)[:, None]
    return u


@dataclass(frozen=True, eq=False)
class GSeriesSample:
    """
    Per-replica truncations of G = sum_{k>=0} eta_{k+1} e^{-S_k}.

    Attributes:
        G: (N,) truncated sums up to k = k_max
        u: (N, K) limit right eigenvector estimates u^{(1)}
        tail: (N,) last term divided by the sum
    """

    G: np.ndarray
    u: np.ndarray
    tail: np.ndarray

    @property
    def max_tail(self) -> float:
        return float(np.max(self.tail)) if self.tail.size else 0.0


def g_series(paths: EnvironmentPaths, v: np.ndarray, k_max: int) -> GSeriesSample:
    """
    Evaluate G and u^{(1)} on paths of length at least k_max + 1.

    eta_k = (|v| / rho_k)(w_k, u^{(k+1)}), with u^{(k+1)} from the backward
    recursion over the whole path.
    """
    if paths.length < k_max + 1:
        raise DomainError(
            f"paths of length {paths.length} are too short for k_max={k_max}"
        )
    u = backward_eigenvectors(paths, v)
    S = paths.S
    stop = k_max + 1
    eta = v.sum() * np.exp(-paths.X[:, :stop]) * np.einsum(
        "nkj,nkj->nk", paths.w[:, :stop], u[:, 1 : stop + 1]
    )
    terms = eta * np.exp(-S[:, :stop])
    G = terms.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(G > 0, terms[:, -1] / G, np.inf)
    return GSeriesSample(G=G, u=u[:, 0], tail=tail)


def fold_capture(
    paths: EnvironmentPaths, v: np.ndarray, stops: Iterable[int]
) -> Dict[int, QuenchedState]:
    """Forward batched states after each generation listed in stops."""
    wanted = sorted({int(n) for n in stops})
    if wanted and (wanted[0] < 1 or wanted[-1] > paths.length):
        raise DomainError(f"stops must lie in [1, {paths.length}]")
    captured: Dict[int, QuenchedState] = {}
    state = initial_state(v, batch=paths.replicas)
    for k in range(wanted[-1] if wanted else 0):
        state = advance(state, paths.M[:, k], paths.w[:, k], paths.X[:, k])
        if k + 1 in wanted:
            captured[k + 1] = state
    return captured


def clamp_survival(
    Q: np.ndarray, r_floor: float, counter: Optional[Counter] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Clip Q into (0, 1 - r_floor]; returns (Q, R) and counts clamped entries."""
    over = Q > 1.0 - r_floor
    if counter is not None and np.any(over):
        counter["clamped"] += int(np.count_nonzero(over))
    Q = np.where(over, 1.0 - r_floor, Q)
    return Q, 1.0 - Q


def limit_law_integrand(
    Q: np.ndarray, R: np.ndarray, u: np.ndarray, v: np.ndarray, z: Sequence[int]
) -> np.ndarray:
    """
    C(z, v) sum_r (z_r / u_r)(Q(r)^2 / R(r)) prod_j R(j)^{z_j}, per replica.

    Its mean is p(z) under the tilted law and q(z) under the conditioned law.
    """
    z_arr = np.asarray(z, dtype=np.int64)
    weight = multinomial_weight(z_arr, v)
    inner = np.sum(z_arr * Q**2 / (u * R), axis=-1)
    return weight * inner * np.prod(R**z_arr, axis=-1)


def limit_law_levels(
    Q: np.ndarray, R: np.ndarray, u: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (y, x) with total mass y m x^{m-1} on level |z| = m.

    y = sum_r v_r Q(r)^2 / (|v|^2 u_r) and x = sum_j v_j R(j) / |v|.
    """
    total = v.sum()
    y = np.sum(v * Q**2 / u, axis=-1) / total**2
    x = np.sum(v * R, axis=-1) / total
    return y, x


def limit_law_total(
    Q: np.ndarray, R: np.ndarray, u: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Mass of the whole limit law, y / (1 - x)^2, per replica."""
    y, x = limit_law_levels(Q, R, u, v)
    return y / (1.0 - x) ** 2


def limit_law_tail(
    Q: np.ndarray, R: np.ndarray, u: np.ndarray, v: np.ndarray, z_max: int
) -> np.ndarray:
    """Mass beyond |z| = z_max: y x^M ((M + 1) - M x) / (1 - x)^2 with M = z_max."""
    y, x = limit_law_levels(Q, R, u, v)
    return y * x**z_max * ((z_max + 1) - z_max * x) / (1.0 - x) ** 2


@dataclass(frozen=True, eq=False)
class SplitTerms:
    """
    Per-replica pieces of a conditional law at a split time s.

    Attributes:
        numerators: z -> e^{S_n} P_{e_i}(Z_s = z) P_z(Z_{n-s} = e_l)
        denominator: e^{S_n} P_{e_i}(Z_n = e_l)
    """

    numerators: Dict[Tuple[int, ...], np.ndarray]
    denominator: np.ndarray
    full: QuenchedState = field(repr=False)


def split_time_terms(
    paths: EnvironmentPaths,
    v: np.ndarray,
    i: int,
    l: int,
    split: np.ndarray,
    support: Sequence[Tuple[int, ...]],
    counter: Optional[Counter] = None,
) -> SplitTerms:
    """
    Markov-property factorization of {Z_s = z, Z_n = e_l} at per-replica times s.

    The prefix state (letters 1..s) and suffix state (letters s+1..n) are built
    in one masked pass; s = 0 and s = n use the trivial laws of Z_0.

    Args:
        paths: Tilted environment prefixes of length n
        v: Common left eigenvector
        i: Ancestor type
        l: Final single-particle type
        split: (N,) split times in [0, n]
        support: Type vectors z to evaluate
        counter: Optional Counter for clamp events
    """
    N, n = paths.replicas, paths.length
    K = v.size
    split = np.asarray(split, dtype=np.int64)
    if split.shape != (N,) or np.any(split < 0) or np.any(split > n):
        raise DomainError("split times must be an (N,) array in [0, n]")

    running = initial_state(v, batch=N)
    prefix = running
    suffix = initial_state(v, batch=N)
    for k in range(n):
        M, w, X = paths.M[:, k], paths.w[:, k], paths.X[:, k]
        running = advance(running, M, w, X)
        prefix = running.where(split == k + 1, prefix)
        suffix = advance(suffix, M, w, X).where(split <= k, suffix)

    e_i, e_l = unit(K, i), unit(K, l)
    denominator = np.asarray(
        local_prob_vector(running, i, e_l, scaled=True, counter=counter)
    )
    has_prefix = np.asarray(prefix.n) >= 1
    has_suffix = np.asarray(suffix.n) >= 1
    safe_prefix = prefix.where(has_prefix, running)
    safe_suffix = suffix.where(has_suffix, running)

    numerators: Dict[Tuple[int, ...], np.ndarray] = {}
    for z in support:
        z = tuple(int(x) for x in z)
        head = np.asarray(
            local_prob_vector(safe_prefix, i, z, scaled=True, counter=counter)
        )
        head = np.where(has_prefix, head, float(z == e_i))
        rest = np.asarray(prob_from_population(safe_suffix, z, l, scaled=True))
        rest = np.where(has_suffix, rest, float(z == e_l))
        numerators[z] = head * rest
    return SplitTerms(numerators=numerators, denominator=denominator, full=running)


@dataclass(frozen=True)
class RatioRow:
    n: int
    event: str
    estimate: Estimate
    reference: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        row: Dict[str, object] = {"n": self.n, "event": self.event}
        row.update(self.estimate.to_dict())
        if self.reference is not None:
            row["reference"] = self.reference
        return row


INSUFFICIENT_GRID = "insufficient grid"


@dataclass
class RatioTable:
    """Ratio estimates over an n-grid for a set of events."""

    rows: List[RatioRow] = field(default_factory=list)

    def events(self) -> List[str]:
        return sorted({row.event for row in self.rows})

    def series(self, event: str) -> List[RatioRow]:
        rows = (row for row in self.rows if row.event == event)
        return sorted(rows, key=lambda r: r.n)

    def last(self, event: str) -> RatioRow:
        return self.series(event)[-1]

    def relative_drift(self, event: str) -> float:
        """Relative change between the two largest n (nan on a short grid)."""
        series = self.series(event)
        if len(series) < 2:
            return float("nan")
        prev, last = series[-2].estimate.value, series[-1].estimate.value
        if prev == 0:
            return float("inf") if last != 0 else 0.0
        return abs(last - prev) / abs(prev)

    def stabilization(self, event: str, tolerance: float) -> str:
        if len(self.series(event)) < 2:
            return INSUFFICIENT_GRID
        return "stable" if self.relative_drift(event) < tolerance else "unstable"


def channel_name(label: str, n: int) -> str:
    return f"{label}@{n}"


def window_label(c: int) -> str:
    return f"1<=|Z|<={c}"


def support_key(z: Sequence[int]) -> str:
    return ",".join(str(int(x)) for x in z)


def event_shard(
    shard: Shard,
    model: EnvModel,
    i: int,
    events: Sequence[Event],
    n_grid: Sequence[int],
    windows: Sequence[int] = (),
    with_walk: bool = False,
    pairs: Sequence[Tuple[str, str]] = (),
) -> EstimatorAccumulator:
    """
    Scaled event probabilities e^{S_n} P_{e_i}(event) on tilted paths.

    Channels are named channel_name(event_label(event), n); windows add
    e^{S_n} P(1 <= |Z_n| <= c) and with_walk adds the indicator of {L_n >= 0}
    under the label "hit".
    """
    rng = shard.rng()
    v = model.v_array
    paths = sample_paths(model, rng, shard.size, max(n_grid))
    states = fold_capture(paths, v, n_grid)
    running_min = np.minimum.accumulate(paths.S, axis=1)

    acc = EstimatorAccumulator()
    channels: Dict[str, np.ndarray] = {}
    for n, state in states.items():
        for event in events:
            channels[channel_name(event_label(event), n)] = scaled_event_prob(
                state, i, event, acc.counters
            )
        for c in windows:
            channels[channel_name(window_label(c), n)] = sum(
                np.asarray(local_prob_total(state, i, z, scaled=True))
                for z in range(1, c + 1)
            )
        if with_walk:
            channels[channel_name("hit", n)] = (running_min[:, n] >= 0).astype(float)
    acc.add(channels, pairs)
    return acc


def split_shard(
    shard: Shard,
    model: EnvModel,
    i: int,
    l: int,
    n: int,
    t: float,
    support: Sequence[Tuple[int, ...]],
    at_minimum: bool = False,
) -> EstimatorAccumulator:
    """
    Numerators and denominator of P_{e_i}(Z_s = z | Z_n = e_l) on tilted paths.

    s is floor(n t), or tau_{floor(n t), n} when at_minimum is set.
    """
    rng = shard.rng()
    paths = sample_paths(model, rng, shard.size, n)
    m = int(math.floor(n * t))
    if at_minimum:
        split = batch_functionals(paths.S, k=m)["tau_k"]
    else:
        split = np.full(shard.size, m, dtype=np.int64)

    acc = EstimatorAccumulator()
    terms = split_time_terms(paths, model.v_array, i, l, split, support, acc.counters)
    channels = {"den": terms.denominator}
    for z, values in terms.numerators.items():
        channels[f"num:{support_key(z)}"] = values
    channels["num_sum"] = sum(terms.numerators.values(), np.zeros(shard.size))
    pairs = [(name, "den") for name in channels if name != "den"]
    acc.add(channels, pairs)
    acc.note_max("split_mean", float(np.mean(split)))
    return acc


def conditional_table(
    acc: EstimatorAccumulator, support: Sequence[Tuple[int, ...]]
) -> Tuple[Dict[Tuple[int, ...], Estimate], Estimate]:
    """Per-z conditional probabilities and their enumerated total."""
    table = {
        tuple(int(x) for x in z): acc.ratio(f"num:{support_key(z)}", "den")
        for z in support
    }
    return table, acc.ratio("num_sum", "den")


def check_grid(n_grid: Sequence[int]) -> List[int]:
    """Sorted distinct n-grid; raises ConfigError if empty or below 1."""
    grid = sorted({int(n) for n in n_grid})
    if not grid or grid[0] < 1:
        raise ConfigError("n_grid must hold at least one n >= 1")
    return grid


def check_type(model: EnvModel, *types: int) -> None:
    for i in types:
        if not 0 <= i < model.K:
            raise ConfigError(f"type index {i} out of range for K = {model.K}")
