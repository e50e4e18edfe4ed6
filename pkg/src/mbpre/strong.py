"""Limit constants and ratio checks in the strongly supercritical regime.

With a positive drift under the tilted measure, G = sum_k eta_{k+1} e^{-S_k}
converges and the quenched survival vector tends to Q = |v| u / G.  The
constants

    theta_i = |v| E[u_i / G^2]           (limit of kappa^{-n} P(|Z_n| = m), every m)
    Theta_i(z) = C(z, v) E[Q_i^2 / u_i]  (limit of kappa^{-n} P(Z_n = z))
    p(z) = E[C(z, v) sum_r (z_r / u_r)(Q_r^2 / R_r) prod_j R_j^{z_j}]

are averages over tilted environments and are estimated by Monte Carlo here.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .accumulators import Estimate, EstimatorAccumulator
from .environment import (
    EnvModel,
    Regime,
    RegimeReport,
    classify,
    sample_paths,
    tilted_view,
)
from .exceptions import (
    ConfigError,
    DegenerateShiftError,
    RegimeMismatchError,
    TailNotConvergedError,
)
from .limits import (
    Event,
    GSeriesSample,
    Horizons,
    RatioRow,
    RatioTable,
    channel_name,
    check_grid,
    check_type,
    clamp_survival,
    conditional_table,
    enumerate_support,
    event_label,
    event_shard,
    fold_capture,
    g_series,
    limit_law_integrand,
    limit_law_tail,
    limit_law_total,
    multinomial_weight,
    split_shard,
    support_key,
    window_label,
)
from .linfrac import survival_probs
from .parallel import Shard, ReplicaPool

logger = logging.getLogger("mbpre")

DEFAULT_TAIL_BOUND = 1e-6
DEFAULT_R_FLOOR = 1e-12
REGIME_CHECK_BUDGET = 256


def require_regime(model: EnvModel, *allowed: Regime) -> RegimeReport:
    """
    Classify model and check its regime.

    Raises:
        RegimeMismatchError: If the regime is not one of allowed
    """
    report = classify(model, mc_budget=REGIME_CHECK_BUDGET)
    if report.regime not in allowed:
        expected = " or ".join(r.value for r in allowed)
        raise RegimeMismatchError(
            f"expected a {expected} model, got {report.regime.value}",
            expected=expected,
            actual=report.regime.value,
        )
    return report


@dataclass(frozen=True)
class StrongLimitConstants:
    """
    Estimated limit constants of the strong regime.

    Attributes:
        G: Mean of the truncated series G
        u: Mean limit right eigenvector, per type
        Q: Mean limit survival vector |v| u / G, per type
        theta: |v| E[u_i / G^2] per type
        theta_alt: E[Q_i^2 / u_i] / |v| per type (same quantity, other form)
        Theta: (i, z) -> C(z, v) E[Q_i^2 / u_i]
        p_dist: z -> p(z) for every z in the enumerated support
        p_tail: Analytic mass of p beyond the support, averaged
        p_total: Mass of the whole limit law, averaged
        z_max: Largest |z| enumerated
        horizons: Truncation horizons used
        diagnostics: Largest series tail ratio, forward gap, clamp count
    """

    G: Estimate
    u: List[Estimate]
    Q: List[Estimate]
    theta: List[Estimate]
    theta_alt: List[Estimate]
    Theta: Dict[Tuple[int, Tuple[int, ...]], Estimate]
    p_dist: Dict[Tuple[int, ...], Estimate]
    p_tail: Estimate
    p_total: Estimate
    z_max: int
    horizons: Horizons
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def p_enumerated(self) -> float:
        return float(sum(est.value for est in self.p_dist.values()))

    def theta_level_gap(self, i: int, total: int) -> float:
        """|sum_{|z|=total} Theta_i(z) - theta_i|, zero up to rounding."""
        level = sum(
            est.value
            for (j, z), est in self.Theta.items()
            if j == i and sum(z) == total
        )
        return abs(level - self.theta_alt[i].value)

    def to_records(self) -> List[Dict[str, object]]:
        records: List[Dict[str, object]] = [
            {"quantity": "G", **self.G.to_dict()},
            {"quantity": "p_tail", **self.p_tail.to_dict()},
            {"quantity": "p_total", **self.p_total.to_dict()},
        ]
        for name in ("u", "Q", "theta", "theta_alt"):
            for i, est in enumerate(getattr(self, name)):
                records.append({"quantity": name, "i": i, **est.to_dict()})
        for (i, z), est in self.Theta.items():
            records.append({"quantity": "Theta", "i": i, "z": list(z), **est.to_dict()})
        for z, est in self.p_dist.items():
            records.append({"quantity": "p", "z": list(z), **est.to_dict()})
        return records


def estimate_G_u(
    model: EnvModel,
    k_max: int,
    window: int,
    replicas: int,
    rng: np.random.Generator,
    tail_bound: float = DEFAULT_TAIL_BOUND,
) -> GSeriesSample:
    """
    Per-replica samples of (G, u) on tilted environments.

    Each replica uses k_max + window + 1 letters: terms k = 0..k_max enter G
    and the extra letters settle the backward eigenvector recursion.

    Raises:
        RegimeMismatchError: If the model is not strongly supercritical
        TailNotConvergedError: If a replica's last term exceeds tail_bound * G
        DegenerateShiftError: If a replica has G = 0
    """
    require_regime(model, Regime.STRONGLY_SUPERCRITICAL)
    if k_max < 0 or window < 0 or replicas < 1:
        raise ConfigError("need k_max >= 0, window >= 0 and replicas >= 1")
    paths = sample_paths(tilted_view(model), rng, replicas, k_max + window + 1)
    sample = g_series(paths, model.v_array, k_max)
    _check_series(sample, tail_bound)
    return sample


def _check_series(sample: GSeriesSample, tail_bound: float) -> None:
    if np.any(sample.G <= 0):
        raise DegenerateShiftError("G = 0 on some replica: every shift vanished")
    if sample.max_tail > tail_bound:
        raise TailNotConvergedError(
            f"G series tail {sample.max_tail:.3g} exceeds {tail_bound:.3g}",
            tail=sample.max_tail,
            bound=tail_bound,
        )


def _constants_shard(
    shard: Shard,
    model: EnvModel,
    horizons: Horizons,
    z_max: int,
    r_floor: float,
) -> EstimatorAccumulator:
    rng = shard.rng()
    v = model.v_array
    total = v.sum()
    length = max(horizons.k_max + horizons.window + 1, horizons.n_inner)
    paths = sample_paths(model, rng, shard.size, length)
    sample = g_series(paths, v, horizons.k_max)
    if np.any(sample.G <= 0):
        raise DegenerateShiftError("G = 0 on some replica: every shift vanished")
    G, u = sample.G, sample.u
    Q_raw = total * u / G[:, None]

    acc = EstimatorAccumulator()
    Q, R = clamp_survival(Q_raw, r_floor, acc.counters)
    channels: Dict[str, np.ndarray] = {"G": G}
    for i in range(model.K):
        channels[f"u{i}"] = u[:, i]
        channels[f"Q{i}"] = Q[:, i]
        channels[f"theta{i}"] = total * u[:, i] / G**2
        channels[f"theta_alt{i}"] = Q[:, i] ** 2 / u[:, i] / total
        channels[f"qsq{i}"] = Q[:, i] ** 2 / u[:, i]
    for z in enumerate_support(model.K, z_max):
        channels[f"p:{support_key(z)}"] = limit_law_integrand(Q, R, u, v, z)
    channels["p_tail"] = limit_law_tail(Q, R, u, v, z_max)
    channels["p_total"] = limit_law_total(Q, R, u, v)
    acc.add(channels)

    acc.note_max("g_tail", sample.max_tail)
    forward = fold_capture(paths, v, [horizons.n_inner])[horizons.n_inner]
    Q_forward = survival_probs(forward, with_eigenvector=False).Q
    acc.note_max("forward_gap", float(np.max(np.abs(Q_forward - Q_raw))))
    return acc


def estimate_strong_constants(
    model: EnvModel,
    z_max: int,
    replicas: int,
    horizons: Optional[Horizons] = None,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    tail_bound: float = DEFAULT_TAIL_BOUND,
    r_floor: float = DEFAULT_R_FLOOR,
) -> StrongLimitConstants:
    """
    Estimate G, u, Q, theta, Theta and p over the support |z| <= z_max.

    Args:
        model: Untilted environment model
        z_max: Largest total size enumerated
        replicas: Number of tilted environments
        horizons: Truncation horizons (defaults: k_max=200, window=50, n_inner=400)
        seed: Experiment seed; model.seed when None
        pool: Worker pool; an in-process pool when None
        tail_bound: Largest acceptable last-term ratio of the G series
        r_floor: Q is clipped to 1 - r_floor before dividing by R

    Raises:
        RegimeMismatchError: If the model is not strongly supercritical
        TailNotConvergedError: If the G series has not converged at k_max
        DegenerateShiftError: If G = 0 on some replica
    """
    require_regime(model, Regime.STRONGLY_SUPERCRITICAL)
    if z_max < 1 or replicas < 2:
        raise ConfigError("need z_max >= 1 and replicas >= 2")
    horizons = horizons or Horizons()
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    K = model.K

    acc = pool.reduce(
        _constants_shard,
        replicas,
        seed,
        "strong-constants",
        model=tilted_view(model),
        horizons=horizons,
        z_max=z_max,
        r_floor=r_floor,
    )
    g_tail = acc.maxima.get("g_tail", 0.0)
    if g_tail > tail_bound:
        raise TailNotConvergedError(
            f"G series tail {g_tail:.3g} exceeds {tail_bound:.3g}",
            tail=g_tail,
            bound=tail_bound,
        )

    v = model.v_array
    support = enumerate_support(K, z_max)
    Theta = {
        (i, z): acc.estimate(f"qsq{i}", scale=multinomial_weight(z, v))
        for i in range(K)
        for z in support
    }
    constants = StrongLimitConstants(
        G=acc.estimate("G"),
        u=[acc.estimate(f"u{i}") for i in range(K)],
        Q=[acc.estimate(f"Q{i}") for i in range(K)],
        theta=[acc.estimate(f"theta{i}") for i in range(K)],
        theta_alt=[acc.estimate(f"theta_alt{i}") for i in range(K)],
        Theta=Theta,
        p_dist={z: acc.estimate(f"p:{support_key(z)}") for z in support},
        p_tail=acc.estimate("p_tail"),
        p_total=acc.estimate("p_total"),
        z_max=z_max,
        horizons=horizons,
        diagnostics={
            "g_tail": g_tail,
            "forward_gap": acc.maxima.get("forward_gap", float("nan")),
            "clamped": float(acc.counters.get("clamped", 0)),
        },
    )
    if constants.diagnostics["clamped"]:
        clamped = int(constants.diagnostics["clamped"])
        logger.warning(f"Clamped {clamped} survival entries")
    logger.info(
        f"Strong constants: G={constants.G.value:.6g}, "
        f"theta={[round(t.value, 6) for t in constants.theta]}"
    )
    return constants


def _reference(
    constants: Optional[StrongLimitConstants], i: int, event: Event
) -> Optional[float]:
    """theta_i for total-size events, Theta_i(z) for vector events."""
    if constants is None:
        return None
    if isinstance(event, (int, np.integer)):
        return constants.theta[i].value
    key = (i, tuple(int(x) for x in event))
    return constants.Theta[key].value if key in constants.Theta else None


def verify_strong_ratio(
    model: EnvModel,
    i: int,
    events: Sequence[Event],
    n_grid: Sequence[int],
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    constants: Optional[StrongLimitConstants] = None,
) -> RatioTable:
    """
    kappa^{-n} P_{e_i}(|Z_n| = m) and kappa^{-n} P_{e_i}(Z_n = z) over n.

    Rows of total-size events (ints) settle near theta_i for every m; rows of
    vector events (tuples) settle near Theta_i(z).

    Raises:
        RegimeMismatchError: If the model is not strongly supercritical
    """
    report = require_regime(model, Regime.STRONGLY_SUPERCRITICAL)
    check_type(model, i)
    grid = check_grid(n_grid)
    vector_events = any(not isinstance(e, (int, np.integer)) for e in events)
    if vector_events and not report.eigen_gap_condition:
        logger.warning(
            "Eigen-gap condition fails for this model; vector-event limits "
            "may not be reached"
        )
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    acc = pool.reduce(
        event_shard,
        replicas,
        seed,
        "strong-ratio",
        model=tilted_view(model),
        i=i,
        events=list(events),
        n_grid=grid,
    )

    table = RatioTable()
    for event in events:
        label = event_label(event)
        for n in grid:
            table.rows.append(
                RatioRow(
                    n=n,
                    event=label,
                    estimate=acc.estimate(channel_name(label, n)),
                    reference=_reference(constants, i, event),
                )
            )
    return table


@dataclass
class UniformTable:
    """
    Conditional laws P(|Z_n| = z | 1 <= |Z_n| <= c) over an n-grid.

    Attributes:
        regime: Regime the model was classified in
        c: Window size
        rows: Ratio rows, one per (n, z)
    """

    regime: Regime
    c: int
    rows: List[RatioRow] = field(default_factory=list)

    def max_deviation(self, n: Optional[int] = None) -> float:
        """Largest |estimate - 1/c|, at n or at the largest n of the grid."""
        n = max(row.n for row in self.rows) if n is None else n
        return max(
            abs(row.estimate.value - 1.0 / self.c) for row in self.rows if row.n == n
        )

    def max_stderr(self, n: Optional[int] = None) -> float:
        n = max(row.n for row in self.rows) if n is None else n
        return max(row.estimate.stderr for row in self.rows if row.n == n)


def verify_uniform(
    model: EnvModel,
    i: int,
    c: int,
    n_grid: Sequence[int],
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
) -> UniformTable:
    """
    Conditional law of |Z_n| given 1 <= |Z_n| <= c, which tends to uniform.

    Works in the strong and the intermediate regime; other regimes are run
    anyway with a warning.
    """
    if c < 1:
        raise ConfigError("c must be at least 1")
    check_type(model, i)
    grid = check_grid(n_grid)
    report = classify(model, mc_budget=REGIME_CHECK_BUDGET)
    supported = (Regime.STRONGLY_SUPERCRITICAL, Regime.INTERMEDIATELY_SUPERCRITICAL)
    if report.regime not in supported:
        logger.warning(f"Uniform limit is not expected in regime {report.regime.value}")
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    sizes = list(range(1, c + 1))
    pairs = [
        (channel_name(event_label(z), n), channel_name(window_label(c), n))
        for n in grid
        for z in sizes
    ]
    acc = pool.reduce(
        event_shard,
        replicas,
        seed,
        "uniform",
        model=tilted_view(model),
        i=i,
        events=sizes,
        n_grid=grid,
        windows=[c],
        pairs=pairs,
    )
    table = UniformTable(regime=report.regime, c=c)
    for n in grid:
        for z in sizes:
            table.rows.append(
                RatioRow(
                    n=n,
                    event=event_label(z),
                    estimate=acc.ratio(
                        channel_name(event_label(z), n),
                        channel_name(window_label(c), n),
                    ),
                    reference=1.0 / c,
                )
            )
    logger.info(f"Uniform check (c={c}): max deviation {table.max_deviation():.3g}")
    return table


@dataclass
class ConditionalLaw:
    """
    Estimated law of Z at a split time given Z_n = e_l.

    Attributes:
        n: Final generation
        i: Ancestor type
        l: Final type
        t: Split fraction
        table: z -> conditional probability
        enumerated: Conditional mass of the enumerated support
        reference: z -> limit value (when known)
    """

    n: int
    i: int
    l: int
    t: float
    table: Dict[Tuple[int, ...], Estimate]
    enumerated: Estimate
    reference: Dict[Tuple[int, ...], float] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, object]]:
        out = []
        for z, est in self.table.items():
            row: Dict[str, object] = {
                "n": self.n,
                "i": self.i,
                "l": self.l,
                "t": self.t,
                "z": list(z),
                **est.to_dict(),
            }
            if z in self.reference:
                row["reference"] = self.reference[z]
            out.append(row)
        return out

    def max_sigma_gap(self, sigma_floor: float = 0.0) -> float:
        """Largest |estimate - reference| in units of the combined stderr."""
        worst = 0.0
        for z, est in self.table.items():
            if z not in self.reference or math.isnan(est.value):
                continue
            scale = max(est.stderr, sigma_floor)
            gap = abs(est.value - self.reference[z])
            if scale > 0:
                worst = max(worst, gap / scale)
            elif gap > 0:
                worst = math.inf
        return worst


def verify_p(
    model: EnvModel,
    i: int,
    l: int,
    t: float,
    n_grid: Sequence[int],
    z_max: int,
    replicas: int,
    seed: Optional[int] = None,
    pool: Optional[ReplicaPool] = None,
    constants: Optional[StrongLimitConstants] = None,
) -> List[ConditionalLaw]:
    """
    P_{e_i}(Z_{floor(nt)} = z | Z_n = e_l) for each n, compared against p(z).

    Raises:
        RegimeMismatchError: If the model is not strongly supercritical
    """
    require_regime(model, Regime.STRONGLY_SUPERCRITICAL)
    check_type(model, i, l)
    if not 0 < t < 1:
        raise ConfigError("t must lie in (0, 1)")
    grid = check_grid(n_grid)
    pool = pool or ReplicaPool()
    seed = model.seed if seed is None else seed
    support = enumerate_support(model.K, z_max)
    reference: Dict[Tuple[int, ...], float] = {}
    if constants is not None:
        reference = {z: est.value for z, est in constants.p_dist.items()}

    laws = []
    for n in grid:
        acc = pool.reduce(
            split_shard,
            replicas,
            seed,
            f"strong-p-{n}",
            model=tilted_view(model),
            i=i,
            l=l,
            n=n,
            t=t,
            support=support,
        )
        table, enumerated = conditional_table(acc, support)
        laws.append(
            ConditionalLaw(
                n=n,
                i=i,
                l=l,
                t=t,
                table=table,
                enumerated=enumerated,
                reference=reference,
            )
        )
    return laws
