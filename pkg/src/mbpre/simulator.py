"""Exact sampling of linear-fractional branching processes.

A linear-fractional law with mean matrix M and shift w decomposes as follows.
A type-i parent has no children with probability 1 - |M(i)|/(1 + |w|).
Otherwise it has one head child of type J ~ h(i, .) and G further children,
where G is geometric on {0, 1, ...} with success probability 1/(1 + |w|) and
the extra children have i.i.d. types ~ w/|w|.  The same decomposition with
(M_{1,n}, D_n) in place of (M, w) samples Z_n directly from a quenched state.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DegenerateShiftError, DomainError, ZeroMassConditionError
from .linfrac import (
    LinFracLaw,
    QuenchedState,
    head_weights,
    local_prob_total,
    local_prob_vector,
)
from .utils import read_json, write_json_atomic, write_jsonl

logger = logging.getLogger("mbpre")

DEFAULT_CAP = 10**7


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Type counts Z_n at generation n."""

    counts: np.ndarray
    generation: int = 0

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise DomainError("counts must be a nonnegative integer vector")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def extinct(self) -> bool:
        return self.total == 0

    def to_dict(self) -> dict:
        return {
            "n": self.generation,
            "counts": self.counts.tolist(),
            "total": self.total,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Generations 0..N of one particle simulation.

    Attributes:
        states: PopulationState per generation
        env_ref: The environment letters used, in order
        seed: Seed of the generator, when known
        capped: Whether the run stopped because the population exceeded the cap
    """

    states: List[PopulationState]
    env_ref: Tuple[LinFracLaw, ...] = field(default_factory=tuple)
    seed: Optional[int] = None
    capped: bool = False

    @property
    def totals(self) -> np.ndarray:
        return np.array([s.total for s in self.states])

    def to_jsonl(self, path: Union[str, Path]) -> Path:
        return write_jsonl(path, (state.to_dict() for state in self.states))


def _draw(
    mass: float,
    head: np.ndarray,
    shift: float,
    pi: np.ndarray,
    rng: np.random.Generator,
    count: int,
    survive: Optional[float] = None,
) -> np.ndarray:
    """count i.i.d. vectors from the head + geometric-tail decomposition."""
    K = head.size
    c = 1.0 + shift
    p_nonzero = mass / c if survive is None else survive
    out = np.zeros((count, K), dtype=np.int64)
    alive = np.flatnonzero(rng.random(count) < p_nonzero)
    if not alive.size:
        return out
    heads = rng.choice(K, size=alive.size, p=head)
    out[alive, heads] += 1
    if shift > 0:
        tails = rng.geometric(1.0 / c, size=alive.size) - 1
        out[alive] += rng.multinomial(tails, pi)
    return out


def _head_row(M: np.ndarray, w: np.ndarray, i: int) -> np.ndarray:
    h = np.clip(head_weights(M, w)[i], 0.0, None)
    return h / h.sum()


def _shift_types(w: np.ndarray) -> np.ndarray:
    total = w.sum()
    return w / total if total > 0 else np.full(w.size, 1.0 / w.size)


def sample_offspring(
    law: LinFracLaw, i: int, rng: np.random.Generator, size: Optional[int] = None
) -> np.ndarray:
    """
    Offspring vector(s) of one type-i parent.

    Args:
        law: Proper linear-fractional law
        i: Parent type
        rng: Random generator
        size: Number of i.i.d. draws, or None for a single K-vector

    Raises:
        DomainError: If the law is not a probability generating function
    """
    if not 0 <= i < law.K:
        raise DomainError(f"type index {i} out of range")
    if not law.is_proper(atol=1e-9):
        raise DomainError("law is not a proper linear-fractional offspring law")
    draws = _draw(
        mass=float(law.M[i].sum()),
        head=_head_row(law.M, law.w, i),
        shift=float(law.w.sum()),
        pi=_shift_types(law.w),
        rng=rng,
        count=1 if size is None else size,
    )
    return draws[0] if size is None else draws


def _generation(
    law: LinFracLaw, counts: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Children of a whole generation, aggregated per parent type."""
    K = law.K
    shift = float(law.w.sum())
    c = 1.0 + shift
    pi = _shift_types(law.w)
    heads = head_weights(law.M, law.w)
    children = np.zeros(K, dtype=np.int64)
    for j in np.flatnonzero(counts):
        fertile = rng.binomial(int(counts[j]), min(float(law.M[j].sum()) / c, 1.0))
        if not fertile:
            continue
        h = np.clip(heads[j], 0.0, None)
        children += rng.multinomial(fertile, h / h.sum())
        if shift > 0:
            tails = rng.negative_binomial(fertile, 1.0 / c)
            if tails:
                children += rng.multinomial(tails, pi)
    return children


def simulate_particles(
    env: Sequence[LinFracLaw],
    z0: Union[PopulationState, Sequence[int]],
    horizon: int,
    rng: Optional[np.random.Generator] = None,
    cap: int = DEFAULT_CAP,
    seed: Optional[int] = None,
) -> Trajectory:
    """
    Simulate Z_0..Z_horizon along a fixed environment.

    Parents of the same type in one generation are aggregated: a binomial number
    of them are fertile, their heads are multinomial and their geometric tails
    add up to a negative binomial count.

    Args:
        env: Letters L_1..L_N with N >= horizon
        z0: Initial population
        horizon: Number of generations (>= 0)
        rng: Random generator; built from seed when None
        cap: Largest total population allowed before the run is truncated
        seed: Seed recorded in the trajectory (and used when rng is None)
    """
    if horizon < 0:
        raise DomainError("horizon must be nonnegative")
    if cap < 1:
        raise DomainError("cap must be positive")
    if len(env) < horizon:
        raise DomainError(f"environment has {len(env)} letters, horizon is {horizon}")
    start = z0 if isinstance(z0, PopulationState) else PopulationState(z0, 0)
    if env and start.counts.size != env[0].K:
        raise DomainError("z0 does not match the number of types")
    rng = rng if rng is not None else np.random.default_rng(seed)

    states = [PopulationState(start.counts, 0)]
    counts = start.counts.copy()
    capped = False
    for n in range(1, horizon + 1):
        if counts.sum() > 0:
            counts = _generation(env[n - 1], counts, rng)
        states.append(PopulationState(counts, n))
        if counts.sum() > cap:
            capped = True
            logger.debug(f"Population {counts.sum()} exceeded cap {cap} at n={n}")
            break
    return Trajectory(
        states=states, env_ref=tuple(env[:horizon]), seed=seed, capped=capped
    )


def _quenched_parts(
    state: QuenchedState, i: int
) -> Tuple[float, np.ndarray, np.ndarray, float]:
    """(P(Z_n != 0), head row, tail types, tail ratio H) of a single state."""
    if np.ndim(state.S) != 0:
        raise DomainError("direct sampling needs a single (unbatched) state")
    if state.n < 1:
        raise DomainError("direct sampling needs n >= 1")
    Dt = state.Dtilde
    abs_D = float(Dt.sum())
    if abs_D <= 0:
        raise DegenerateShiftError("D_n = 0: the quenched law has no geometric tail")
    den = float(state.scale) + abs_D
    row = state.Mtilde[i]
    mu = row / row.sum()
    pi = Dt / abs_D
    # |D_n| (mu - pi) with |D_n| = e^{S} |Dtilde|
    head = np.clip(mu + np.exp(float(state.S)) * abs_D * (mu - pi), 0.0, None)
    return min(float(row.sum()) / den, 1.0), head / head.sum(), pi, abs_D / den


def sample_zn_direct(
    state: QuenchedState, i: int, rng: np.random.Generator, size: Optional[int] = None
) -> np.ndarray:
    """
    Draw Z_n from e_i directly from the quenched state.

    Raises:
        DegenerateShiftError: If |D_n| = 0
    """
    survive, head, pi, H = _quenched_parts(state, i)
    K = state.K
    count = 1 if size is None else size
    out = np.zeros((count, K), dtype=np.int64)
    alive = np.flatnonzero(rng.random(count) < survive)
    if alive.size:
        out[alive, rng.choice(K, size=alive.size, p=head)] += 1
        tails = rng.geometric(1.0 - H, size=alive.size) - 1
        out[alive] += rng.multinomial(tails, pi)
    return out[0] if size is None else out


@dataclass(frozen=True)
class SingleParticle:
    """The event {Z_n = e_l}."""

    l: int


@dataclass(frozen=True)
class TotalBetween:
    """The event {1 <= |Z_n| <= c}."""

    c: int

    def __post_init__(self) -> None:
        if self.c < 1:
            raise DomainError("c must be at least 1")


Condition = Union[SingleParticle, TotalBetween]


def condition_masses(state: QuenchedState, i: int, condition: Condition) -> np.ndarray:
    """Quenched masses of the condition's atoms (one per size for TotalBetween)."""
    if isinstance(condition, SingleParticle):
        e_l = np.zeros(state.K, dtype=np.int64)
        e_l[condition.l] = 1
        return np.array([local_prob_vector(state, i, e_l)])
    return np.array([local_prob_total(state, i, z) for z in range(1, condition.c + 1)])


def condition_mass(state: QuenchedState, i: int, condition: Condition) -> float:
    """Quenched probability of the condition."""
    return float(condition_masses(state, i, condition).sum())


def conditional_sampler(
    state: QuenchedState,
    i: int,
    condition: Condition,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """
    Exact draw of Z_n from e_i given the condition, by renormalizing masses.

    Raises:
        ZeroMassConditionError: If the condition has zero quenched probability
    """
    masses = condition_masses(state, i, condition)
    total = masses.sum()
    if not total > 0:
        raise ZeroMassConditionError(f"condition {condition} has zero quenched mass")
    count = 1 if size is None else size
    K = state.K
    out = np.zeros((count, K), dtype=np.int64)
    if isinstance(condition, SingleParticle):
        out[:, condition.l] = 1
    else:
        _, head, pi, _ = _quenched_parts(state, i)
        sizes = rng.choice(np.arange(1, condition.c + 1), size=count, p=masses / total)
        out[np.arange(count), rng.choice(K, size=count, p=head)] += 1
        out += rng.multinomial(sizes - 1, pi)
    return out[0] if size is None else out


def save_environment(path: Union[str, Path], laws: Sequence[LinFracLaw]) -> Path:
    """Write an environment fixture as a JSON list of {M, w}."""
    return write_json_atomic(path, [law.to_dict() for law in laws])


def load_environment(
    path: Union[str, Path], alpha: Optional[float] = None
) -> List[LinFracLaw]:
    """Read an environment fixture written by save_environment."""
    data = read_json(path)
    if not isinstance(data, list):
        raise DomainError(f"{path} does not hold a list of laws")
    return [LinFracLaw.from_dict(entry, alpha=alpha) for entry in data]
