"""Limit constants and checks in the intermediately supercritical regime.

Under the tilted measure the associated walk has zero drift, so the scaled
probabilities kappa^{-n} P(Z_n = z) decay like P(L_n >= 0) and the limits are
taken after dividing by it.  The constant

    Delta_hat_i = sum_k E[1{tau_k = k} V(S_{k+N} - S_k) 1{L_{k,k+N} >= 0}
                          Q_{k+N}(i)^2 / u_i]

uses the renewal function V of the walk; its sum is truncated at k_max and the
inner horizon N stands in for infinity.  The conditioned law
q(z) = E^+[C(z, v) sum_r (z_r / u_r)(Q_r^2 / R_r) prod_j R_j^{z_j}] and the
split-time law at the last running minimum are estimated on the same paths.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .accumulators import Estimate, EstimatorAccumulator
from .environment import EnvModel, Regime, sample_paths, tilted_view
from .exceptions import ConfigError, MissingRenewalTableError, TailNotConvergedError
from .limits import (
    Event,
    Horizons,
    RatioRow,
    RatioTable,
    backward_eigenvectors,
    channel_name,
    check_grid,
    check_type,
    clamp_survival,
    conditional_table,
    enumerate_support,
    event_label,
    event_shard,
    fold_capture,
    limit_law_integrand,
    limit_law_tail,
    limit_law_total,
    multinomial_weight,
    split_shard,
    support_key,
)
from .linfrac import advance, initial_state, survival_probs, total_size_law
from .parallel import ReplicaPool, Shard
from .strong import (
    DEFAULT_R_FLOOR,
    DEFAULT_TAIL_BOUND,
    ConditionalLaw,
    require_regime,
)
from .walks import RenewalTable, new_minimum, plus_weights

logger = logging.getLogger("mbpre")

INTERMEDIATE = Regime.INTERMEDIATELY_SUPERCRITICAL


def _require_table(table: Optional[RenewalTable]) -> RenewalTable:
    if table is None:
        raise MissingRenewalTableError("this estimator needs a renewal table")
    return table


@dataclass(frozen=True)
class IntermLimitConstants:
    """
    Estimated limit constants of the intermediate regime.

    Attributes:
        i: Ancestor type
        delta_hat: Delta_hat_i
        delta: z -> C(z, v) Delta_hat_i over the enumerated support
        delta_unit: l -> v_l Delta_hat_i / |v|^2, the e_l entries of delta
        delta_unit_alt: l -> |v|^2 Delta_hat_i / v_l, the reciprocal scaling,
            kept as a diagnostic
        newmin_weights: P(tau_k = k) for k = 0..k_max
        terms: Mean k-th summand of Delta_hat_i
        horizons: Truncation horizons used
        diagnostics: Tail ratio of the k-sum and clamp count
    """

    i: int
    delta_hat: Estimate
    delta: Dict[Tuple[int, ...], Estimate]
    delta_unit: Dict[int, Estimate]
    delta_unit_alt: Dict[int, Estimate]
    newmin_weights: List[float]
    terms: List[float]
    horizons: Horizons
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def to_records(self) -> List[Dict[str, object]]:
        records: List[Dict[str, object]] = [
            {"quantity": "delta_hat", "i": self.i, **self.delta_hat.to_dict()}
        ]
        for z, est in self.delta.items():
            records.append(
                {"quantity": "Delta", "i": self.i, "z": list(z), **est.to_dict()}
            )
        for l, est in self.delta_unit.items():
            records.append(
                {"quantity": "Delta_unit", "i": self.i, "l": l, **est.to_dict()}
            )
        for l, est in self.delta_unit_alt.items():
            records.append(
                {"quantity": "Delta_unit_alt", "i": self.i, "l": l, **est.to_dict()}
            )
        for k, (weight, term) in enumerate(zip(self.newmin_weights, self.terms)):
            records.append(
                {"quantity": "delta_term", "k": k, "weight": weight, "term": term}
            )
        return records


def _delta_shard(
    shard: Shard,
    model: EnvModel,
    i: int,
    horizons: Horizons,
    table: RenewalTable,
) -> EstimatorAccumulator:
    rng = shard.rng()
    v = model.v_array
    k_max, inner = horizons.k_max, horizons.n_infty
    length = k_max + inner
    paths = sample_paths(model, rng, shard.size, length)
    S = paths.S
    u = backward_eigenvectors(paths, v)[:, 0, i]
    newmin = new_minimum(S)

    # Q_n(i) for n = inner..length, slot k holding n = k + inner
    Q_late = np.empty((shard.size, k_max + 1))
    state = initial_state(v, batch=shard.size)
    for step in range(length):
        state = advance(state, paths.M[:, step], paths.w[:, step], paths.X[:, step])
        if step + 1 >= inner:
            derived = survival_probs(state, with_eigenvector=False)
            Q_late[:, step + 1 - inner] = derived.Q[:, i]

    acc = EstimatorAccumulator()
    channels: Dict[str, np.ndarray] = {}
    total = np.zeros(shard.size)
    for k in range(k_max + 1):
        window = S[:, k : k + inner + 1]
        above = window.min(axis=1) >= S[:, k]
        weight = np.asarray(table(S[:, k + inner] - S[:, k]))
        term = newmin[:, k] * above * weight * Q_late[:, k] ** 2 / u
        total += term
        channels[f"term{k}"] = term
        channels[f"newmin{k}"] = newmin[:, k].astype(float)
    channels["delta"] = total
    acc.add(channels)
    return acc


def estimate_interm_delta(
    model: EnvModel,
    i: int,
    replicas: int,
    table: Optional[RenewalTable],
    horizons: Optional[Horizons] = None,
    z_max: int = 3,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    tail_bound: float = DEFAULT_TAIL_BOUND,
) -> IntermLimitConstants:
    """
    Estimate Delta_hat_i and the derived constants Delta_i(z) = C(z, v) Delta_hat_i.

    Args:
        model: Untilted environment model
        i: Ancestor type
        replicas: Number of tilted paths of length k_max + n_infty
        table: Renewal function of the walk
        horizons: k_max truncates the k-sum, n_infty the inner horizon
        z_max: Largest total size of the reported Delta_i(z)
        seed: Experiment seed; model.seed when None
        pool: Worker pool; in-process when None
        tail_bound: Largest acceptable share of the last summand in the sum

    Raises:
        RegimeMismatchError: If the model is not intermediately supercritical
        MissingRenewalTableError: If table is None
        TailNotConvergedError: If the k = k_max summand is not negligible
    """
    require_regime(model, INTERMEDIATE)
    table = _require_table(table)
    check_type(model, i)
    if replicas < 2 or z_max < 1:
        raise ConfigError("need replicas >= 2 and z_max >= 1")
    horizons = horizons or Horizons()
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed

    acc = pool.reduce(
        _delta_shard,
        replicas,
        seed,
        f"interm-delta-{i}",
        model=tilted_view(model),
        i=i,
        horizons=horizons,
        table=table,
    )
    delta_hat = acc.estimate("delta")
    terms = [acc.mean(f"term{k}") for k in range(horizons.k_max + 1)]
    tail = terms[-1] / delta_hat.value if delta_hat.value > 0 else float("inf")
    if tail > tail_bound:
        raise TailNotConvergedError(
            f"last Delta summand is {tail:.3g} of the sum (bound {tail_bound:.3g})",
            tail=tail,
            bound=tail_bound,
        )

    v = model.v_array
    total = float(v.sum())
    constants = IntermLimitConstants(
        i=i,
        delta_hat=delta_hat,
        delta={
            z: acc.estimate("delta", scale=multinomial_weight(z, v))
            for z in enumerate_support(model.K, z_max)
        },
        delta_unit={
            l: acc.estimate("delta", scale=float(v[l]) / total**2)
            for l in range(model.K)
        },
        delta_unit_alt={
            l: acc.estimate("delta", scale=total**2 / float(v[l]))
            for l in range(model.K)
        },
        newmin_weights=[acc.mean(f"newmin{k}") for k in range(horizons.k_max + 1)],
        terms=terms,
        horizons=horizons,
        diagnostics={"tail": tail, "clamped": float(acc.counters.get("clamped", 0))},
    )
    logger.info(f"Delta_hat_{i} = {delta_hat.value:.6g} +/- {delta_hat.stderr:.2g}")
    return constants


def _reference(
    constants: Optional[IntermLimitConstants], model: EnvModel, event: Event
) -> Optional[float]:
    """Delta_hat / |v| for a total-size level, C(z, v) Delta_hat for a vector."""
    if constants is None:
        return None
    if isinstance(event, (int, np.integer)):
        return constants.delta_hat.value / float(model.v_array.sum())
    return constants.delta_hat.value * multinomial_weight(event, model.v_array)


def verify_interm_ratio(
    model: EnvModel,
    i: int,
    events: Sequence[Event],
    n_grid: Sequence[int],
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    constants: Optional[IntermLimitConstants] = None,
) -> RatioTable:
    """
    kappa^{-n} P_{e_i}(event) / P(L_n >= 0) over n, on the same tilted paths.

    Total-size rows settle near Delta_hat_i / |v| for every m; a table built on
    a single n reports "insufficient grid" from RatioTable.stabilization.

    Raises:
        RegimeMismatchError: If the model is not intermediately supercritical
    """
    require_regime(model, INTERMEDIATE)
    check_type(model, i)
    grid = check_grid(n_grid)
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    pairs = [
        (channel_name(event_label(event), n), channel_name("hit", n))
        for n in grid
        for event in events
    ]
    acc = pool.reduce(
        event_shard,
        replicas,
        seed,
        "interm-ratio",
        model=tilted_view(model),
        i=i,
        events=list(events),
        n_grid=grid,
        with_walk=True,
        pairs=pairs,
    )

    table = RatioTable()
    for event in events:
        label = event_label(event)
        for n in grid:
            estimate = acc.ratio(channel_name(label, n), channel_name("hit", n))
            table.rows.append(
                RatioRow(
                    n=n,
                    event=label,
                    estimate=estimate,
                    reference=_reference(constants, model, event),
                )
            )
    return table


@dataclass(frozen=True)
class QEstimate:
    """
    The conditioned limit law q and its pieces.

    Attributes:
        n: Horizon of the estimate
        q_dist: z -> q(z)
        T_hat: z -> q(z) / (C(z, v) |v|)
        plus_mass: E^+[1] = E[V(S_n); L_n >= 0], close to 1
        q_tail: Analytic mass of q beyond the support
        q_total: Mass of the whole conditioned law
    """

    n: int
    q_dist: Dict[Tuple[int, ...], Estimate]
    T_hat: Dict[Tuple[int, ...], Estimate]
    plus_mass: Estimate
    q_tail: Estimate
    q_total: Estimate

    def q_enumerated(self) -> float:
        return float(sum(est.value for est in self.q_dist.values()))

    def to_records(self) -> List[Dict[str, object]]:
        records: List[Dict[str, object]] = [
            {"quantity": "plus_mass", "n": self.n, **self.plus_mass.to_dict()},
            {"quantity": "q_tail", "n": self.n, **self.q_tail.to_dict()},
            {"quantity": "q_total", "n": self.n, **self.q_total.to_dict()},
        ]
        for z, est in self.q_dist.items():
            records.append(
                {"quantity": "q", "n": self.n, "z": list(z), **est.to_dict()}
            )
        for z, est in self.T_hat.items():
            records.append(
                {"quantity": "T", "n": self.n, "z": list(z), **est.to_dict()}
            )
        return records


def _q_shard(
    shard: Shard,
    model: EnvModel,
    n: int,
    z_max: int,
    table: RenewalTable,
    r_floor: float,
) -> EstimatorAccumulator:
    rng = shard.rng()
    v = model.v_array
    paths = sample_paths(model, rng, shard.size, n)
    state = fold_capture(paths, v, [n])[n]
    u = backward_eigenvectors(paths, v)[:, 0]
    W = plus_weights(table, paths.S)

    acc = EstimatorAccumulator()
    derived = survival_probs(state, with_eigenvector=False)
    Q, R = clamp_survival(derived.Q, r_floor, acc.counters)
    channels: Dict[str, np.ndarray] = {"W": W}
    for z in enumerate_support(model.K, z_max):
        integrand = limit_law_integrand(Q, R, u, v, z)
        channels[f"q:{support_key(z)}"] = W * integrand
    channels["q_tail"] = W * limit_law_tail(Q, R, u, v, z_max)
    channels["q_total"] = W * limit_law_total(Q, R, u, v)
    acc.add(channels)
    return acc


def estimate_q(
    model: EnvModel,
    z_max: int,
    n: int,
    replicas: int,
    table: Optional[RenewalTable],
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    r_floor: float = DEFAULT_R_FLOOR,
) -> QEstimate:
    """
    q(z) = E^+[C(z, v) sum_r (z_r / u_r)(Q_r^2 / R_r) prod_j R_j^{z_j}] at horizon n.

    Raises:
        RegimeMismatchError: If the model is not intermediately supercritical
        MissingRenewalTableError: If table is None
    """
    require_regime(model, INTERMEDIATE)
    table = _require_table(table)
    if z_max < 1 or n < 1 or replicas < 2:
        raise ConfigError("need z_max >= 1, n >= 1 and replicas >= 2")
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    acc = pool.reduce(
        _q_shard,
        replicas,
        seed,
        f"interm-q-{n}",
        model=tilted_view(model),
        n=n,
        z_max=z_max,
        table=table,
        r_floor=r_floor,
    )
    v = model.v_array
    support = enumerate_support(model.K, z_max)
    q_dist = {z: acc.estimate(f"q:{support_key(z)}") for z in support}
    T_hat = {
        z: acc.estimate(
            f"q:{support_key(z)}",
            scale=1.0 / (multinomial_weight(z, v) * float(v.sum())),
        )
        for z in support
    }
    estimate = QEstimate(
        n=n,
        q_dist=q_dist,
        T_hat=T_hat,
        plus_mass=acc.estimate("W"),
        q_tail=acc.estimate("q_tail"),
        q_total=acc.estimate("q_total"),
    )
    if acc.counters.get("clamped"):
        logger.warning(f"Clamped {acc.counters['clamped']} survival entries")
    logger.info(
        f"q over |z| <= {z_max}: enumerated mass {estimate.q_enumerated():.4g}, "
        f"E^+[1] = {estimate.plus_mass.value:.4g}"
    )
    return estimate


def conditional_law_at_minimum(
    model: EnvModel,
    i: int,
    l: int,
    t: float,
    n_grid: Sequence[int],
    z_max: int,
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    reference: Optional[QEstimate] = None,
) -> List[ConditionalLaw]:
    """
    P_{e_i}(Z_{tau_{floor(nt), n}} = z | Z_n = e_l) for each n, compared against q(z).

    Raises:
        RegimeMismatchError: If the model is not intermediately supercritical
    """
    require_regime(model, INTERMEDIATE)
    check_type(model, i, l)
    if not 0 < t < 1:
        raise ConfigError("t must lie in (0, 1)")
    grid = check_grid(n_grid)
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    support = enumerate_support(model.K, z_max)
    values: Dict[Tuple[int, ...], float] = {}
    if reference is not None:
        values = {z: est.value for z, est in reference.q_dist.items()}

    laws = []
    for n in grid:
        acc = pool.reduce(
            split_shard,
            replicas,
            seed,
            f"interm-split-{n}",
            model=tilted_view(model),
            i=i,
            l=l,
            n=n,
            t=t,
            support=support,
            at_minimum=True,
        )
        table, enumerated = conditional_table(acc, support)
        laws.append(
            ConditionalLaw(
                n=n, i=i, l=l, t=t, table=table, enumerated=enumerated, reference=values
            )
        )
    return laws


def _zj_shard(
    shard: Shard, model: EnvModel, z: Tuple[int, ...], n: int
) -> EstimatorAccumulator:
    rng = shard.rng()
    paths = sample_paths(model, rng, shard.size, n)
    state = fold_capture(paths, model.v_array, [n])[n]
    law = np.asarray(total_size_law(state, z, 2, scaled=True))
    hit = (paths.S.min(axis=1) >= 0).astype(float)
    acc = EstimatorAccumulator()
    acc.add(
        {"k1": law[:, 1], "k2": law[:, 2], "hit": hit},
        pairs=[("k1", "hit"), ("k2", "hit")],
    )
    return acc


def k_independence(
    model: EnvModel,
    z: Sequence[int],
    n: int,
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
) -> Dict[int, Estimate]:
    """
    E[e^{S_n} P_z(|Z_n| = k); L_n >= 0] / P(L_n >= 0) for k = 1 and k = 2.

    Both values tend to the same limit: the conditional size law started from
    z does not depend on k.

    Raises:
        RegimeMismatchError: If the model is not intermediately supercritical
    """
    require_regime(model, INTERMEDIATE)
    z = tuple(int(x) for x in z)
    if len(z) != model.K or sum(z) < 1 or min(z) < 0:
        raise ConfigError(f"z must be a nonzero type vector of length {model.K}")
    if n < 1 or replicas < 2:
        raise ConfigError("need n >= 1 and replicas >= 2")
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    acc = pool.reduce(
        _zj_shard,
        replicas,
        seed,
        f"k-independence-{n}",
        model=tilted_view(model),
        z=z,
        n=n,
    )
    return {1: acc.ratio("k1", "hit"), 2: acc.ratio("k2", "hit")}
