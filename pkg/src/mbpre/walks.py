"""Associated random walk S_n = X_1 + ... + X_n and its conditioned toolkit.

In the intermediate regime the tilted walk has zero drift.  This module
estimates P(L_n >= 0), the strict descending-ladder renewal function

    V(x) = 1 + sum_{k>=1} P(-S_k <= x, max(S_1..S_k) < 0),   V(x) = 0 for x < 0,

and expectations under the conditioned measure E^+[Y_n] = E[Y_n V(S_n); L_n >= 0].
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .accumulators import Estimate, EstimatorAccumulator
from .environment import EnvironmentPaths, EnvModel, sample_paths, tilted_view
from .exceptions import ConfigError, DomainError, MissingRenewalTableError
from .parallel import ReplicaPool, Shard
from .utils import config_hash, read_csv, read_json, write_csv, write_json_atomic

logger = logging.getLogger("mbpre")

DRIFT_TOL = 1e-9
DEFAULT_GROUPS = 50


@dataclass(frozen=True, eq=False)
class WalkPath:
    """A walk S_0..S_n with S_0 = 0."""

    S: np.ndarray

    def __post_init__(self) -> None:
        S = np.array(self.S, dtype=float)
        if S.ndim != 1 or S.size < 1:
            raise DomainError("a walk path needs at least S_0")
        if S[0] != 0:
            raise DomainError(f"S_0 must be 0, got {S[0]}")
        object.__setattr__(self, "S", S)

    @classmethod
    def from_increments(cls, X: Sequence[float]) -> "WalkPath":
        return cls(np.concatenate([[0.0], np.cumsum(np.asarray(X, dtype=float))]))

    @property
    def n(self) -> int:
        return int(self.S.size - 1)

    @property
    def X(self) -> np.ndarray:
        return np.diff(self.S)


@dataclass(frozen=True)
class WalkFunctionals:
    """
    Minimum, maximum and first-minimum times of a walk.

    Attributes:
        L: min(S_0..S_n)
        M: max(S_0..S_n)
        tau: First index attaining L
        L_k: min over j of S_{k+j} - S_k
        tau_k: First index in [k, n] attaining min(S_k..S_n)
        k: Start index of the shifted quantities
    """

    L: float
    M: float
    tau: int
    L_k: float
    tau_k: int
    k: int


def batch_functionals(S: np.ndarray, k: int = 0) -> Dict[str, np.ndarray]:
    """Functionals of a (N, n + 1) batch of walks; ties go to the first index."""
    S = np.asarray(S, dtype=float)
    n = S.shape[-1] - 1
    if not 0 <= k <= n:
        raise IndexError(f"k must lie in [0, {n}], got {k}")
    tail = S[..., k:]
    return {
        "L": S.min(axis=-1),
        "M": S.max(axis=-1),
        "tau": S.argmin(axis=-1),
        "L_k": tail.min(axis=-1) - S[..., k],
        "tau_k": k + tail.argmin(axis=-1),
    }


def functionals(path: WalkPath, k: int = 0) -> WalkFunctionals:
    """
    L_n, M_n, tau_n, L_{k,n} and tau_{k,n} of one path.

    Raises:
        IndexError: If k is outside [0, n]
    """
    values = batch_functionals(path.S, k)
    return WalkFunctionals(
        L=float(values["L"]),
        M=float(values["M"]),
        tau=int(values["tau"]),
        L_k=float(values["L_k"]),
        tau_k=int(values["tau_k"]),
        k=k,
    )


def new_minimum(S: np.ndarray) -> np.ndarray:
    """Boolean (N, n + 1) array of {tau_k = k}: S_k lies strictly below S_0..S_{k-1}."""
    S = np.asarray(S, dtype=float)
    out = np.ones(S.shape, dtype=bool)
    if S.shape[-1] > 1:
        before = np.minimum.accumulate(S[..., :-1], axis=-1)
        out[..., 1:] = S[..., 1:] < before
    return out


def stays_above(S: np.ndarray) -> np.ndarray:
    """Boolean (N, n + 1) array of {L_{k,n} >= 0}: S_k <= S_j for all j >= k."""
    S = np.asarray(S, dtype=float)
    suffix_min = np.minimum.accumulate(S[..., ::-1], axis=-1)[..., ::-1]
    return S <= suffix_min


def sample_walks(
    model: EnvModel, rng: np.random.Generator, replicas: int, length: int
) -> np.ndarray:
    """(replicas, length + 1) walks under model's own law of X."""
    S = np.zeros((replicas, length + 1))
    np.cumsum(model.rho_law.sample(rng, (replicas, length)), axis=1, out=S[:, 1:])
    return S


def _check_zero_drift(model: EnvModel, allow_drift: bool) -> None:
    drift = model.rho_law.mean
    if abs(drift) > DRIFT_TOL and not allow_drift:
        logger.warning(
            f"Tilted drift is {drift:.6g}, not zero; conditioned-walk quantities "
            "are only meaningful in the intermediate regime"
        )


def _min_nonneg_shard(
    shard: Shard, model: EnvModel, n_grid: Sequence[int]
) -> EstimatorAccumulator:
    rng = shard.rng()
    S = sample_walks(model, rng, shard.size, max(n_grid))
    running = np.minimum.accumulate(S, axis=1)
    acc = EstimatorAccumulator()
    acc.add({f"n{n}": (running[:, n] >= 0).astype(float) for n in n_grid})
    return acc


def prob_min_nonneg_grid(
    model: EnvModel,
    n_grid: Sequence[int],
    replicas: int,
    seed: int = 0,
    pool: Optional[ReplicaPool] = None,
    allow_drift: bool = False,
) -> Dict[int, Estimate]:
    """
    P(L_n >= 0) for every n in n_grid from one set of tilted walks.

    Sharing the walks makes the estimates nonincreasing in n.
    """
    grid = sorted({int(n) for n in n_grid})
    if not grid or grid[0] < 0:
        raise ConfigError("n_grid must contain nonnegative integers")
    tilted = tilted_view(model)
    _check_zero_drift(tilted, allow_drift)

    results: Dict[int, Estimate] = {}
    if grid[0] == 0:
        results[0] = Estimate(1.0, 0.0, replicas)
    positive = [n for n in grid if n > 0]
    if positive:
        pool = pool or ReplicaPool()
        acc = pool.reduce(
            _min_nonneg_shard,
            replicas,
            seed,
            "min-nonneg",
            model=tilted,
            n_grid=positive,
        )
        for n in positive:
            results[n] = acc.estimate(f"n{n}")
    return results


def prob_min_nonneg(
    model: EnvModel,
    n: int,
    replicas: int,
    seed: int = 0,
    pool: Optional[ReplicaPool] = None,
    allow_drift: bool = False,
) -> Estimate:
    """Monte Carlo frequency of {L_n >= 0} under the tilted law (n = 0 gives 1)."""
    return prob_min_nonneg_grid(model, [n], replicas, seed, pool, allow_drift)[int(n)]


@dataclass(frozen=True, eq=False)
class RenewalTable:
    """
    Tabulated renewal function.

    Attributes:
        grid: Ascending nonnegative points x_0..x_m
        values: V estimates on the grid
        stderr: Batch-means standard errors
        horizon: Truncation K_max
        replicas: Number of walks N
        tail: Fraction of walks still below 0 at K_max
        key: Cache key of the producing run
    """

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    horizon: int = 0
    replicas: int = 0
    tail: float = float("nan")
    key: str = ""

    def __call__(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Piecewise-linear V: 0 below 0, linear extrapolation beyond the grid.
        """
        x_arr = np.asarray(x, dtype=float)
        inside = np.interp(x_arr, self.grid, self.values)
        if self.grid.size > 1:
            rise = self.values[-1] - self.values[-2]
            slope = rise / (self.grid[-1] - self.grid[-2])
            inside = np.where(
                x_arr > self.grid[-1],
                self.values[-1] + slope * (x_arr - self.grid[-1]),
                inside,
            )
        out = np.where(x_arr < 0, 0.0, inside)
        return out if out.ndim else float(out)

    def metadata(self) -> Dict[str, object]:
        return {
            "horizon": self.horizon,
            "replicas": self.replicas,
            "tail": self.tail,
            "key": self.key,
        }

    def to_csv(self, path: Union[str, Path]) -> Path:
        rows = zip(self.grid, self.values, self.stderr)
        return write_csv(path, ("x", "V", "stderr"), rows)

    @classmethod
    def from_csv(cls, path: Union[str, Path], **metadata: object) -> "RenewalTable":
        rows = read_csv(path)
        if not rows:
            raise ConfigError(f"renewal table {path} is empty")
        try:
            grid = np.array([float(row["x"]) for row in rows])
            values = np.array([float(row["V"]) for row in rows])
            stderr = np.array([float(row["stderr"]) for row in rows])
        except (KeyError, ValueError) as e:
            raise ConfigError(
                f"malformed renewal table {path}: {e}", original_exception=e
            )
        return cls(grid=grid, values=values, stderr=stderr, **metadata)  # type: ignore


def _validate_grid(grid: Sequence[float]) -> np.ndarray:
    arr = np.asarray(grid, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ConfigError("renewal grid must be a nonempty 1-d sequence")
    if np.any(arr < 0) or np.any(np.diff(arr) <= 0):
        raise ConfigError("renewal grid must be nonnegative and strictly ascending")
    return arr


def renewal_key(
    model: EnvModel, grid: np.ndarray, k_max: int, replicas: int, seed: int
) -> str:
    return config_hash(
        {
            "model": model.model_hash(),
            "grid": [float(x) for x in grid],
            "k_max": int(k_max),
            "replicas": int(replicas),
            "seed": int(seed),
        }
    )


def _renewal_shard(
    shard: Shard, model: EnvModel, grid: np.ndarray, k_max: int, groups: int
) -> EstimatorAccumulator:
    rng = shard.rng()
    width = grid.size + 1
    hist = np.zeros(groups * width, dtype=np.int64)
    S = np.zeros(shard.size)
    group = (shard.start + np.arange(shard.size)) % groups
    for _ in range(k_max):
        if not S.size:
            break
        S = S + model.rho_law.sample(rng, S.size)
        below = S < 0
        S, group = S[below], group[below]
        slot = np.searchsorted(grid, -S, side="left")
        hist += np.bincount(group * width + slot, minlength=hist.size)

    acc = EstimatorAccumulator(count=shard.size)
    acc.counters["alive"] += int(S.size)
    for key in np.flatnonzero(hist):
        g, j = divmod(int(key), width)
        if j < grid.size:
            acc.tallies[(g, j)] += int(hist[key])
    return acc


def renewal_function(
    model: EnvModel,
    grid: Sequence[float],
    k_max: int,
    replicas: int,
    seed: int = 0,
    pool: Optional[ReplicaPool] = None,
    groups: int = DEFAULT_GROUPS,
    allow_drift: bool = False,
) -> RenewalTable:
    """
    Estimate V on a grid from walks killed at their first visit to [0, inf).

    Args:
        model: Model whose tilted walk has zero drift
        grid: Ascending nonnegative points
        k_max: Truncation horizon
        replicas: Number of walks
        seed: Experiment seed
        pool: Worker pool (in-process by default)
        groups: Number of replica groups for batch-means standard errors
        allow_drift: Silence the nonzero-drift warning

    Returns:
        RenewalTable; its tail field is the fraction of walks not yet killed
        at k_max
    """
    grid_arr = _validate_grid(grid)
    if k_max < 1 or replicas < 1 or groups < 1:
        raise ConfigError("k_max, replicas and groups must be at least 1")
    tilted = tilted_view(model)
    _check_zero_drift(tilted, allow_drift)
    pool = pool or ReplicaPool()

    acc = pool.reduce(
        _renewal_shard, replicas, seed, "renewal",
        model=tilted, grid=grid_arr, k_max=k_max, groups=groups,
    )
    counts = np.zeros((groups, grid_arr.size))
    for (g, j), c in acc.tallies.items():
        counts[g, j] = c
    cumulative = np.cumsum(counts, axis=1)
    values = 1.0 + cumulative.sum(axis=0) / replicas

    sizes = np.bincount(np.arange(replicas) % groups, minlength=groups)
    active = sizes > 0
    if active.sum() > 1:
        per_group = 1.0 + cumulative[active] / sizes[active, None]
        stderr = per_group.std(axis=0, ddof=1) / math.sqrt(active.sum())
    else:
        stderr = np.full(grid_arr.size, np.nan)

    tail = acc.counters["alive"] / replicas
    table = RenewalTable(
        grid=grid_arr,
        values=values,
        stderr=stderr,
        horizon=k_max,
        replicas=replicas,
        tail=tail,
        key=renewal_key(tilted, grid_arr, k_max, replicas, seed),
    )
    logger.info(
        f"Renewal function on {grid_arr.size} points from {replicas} walks "
        f"(K_max={k_max}, tail={tail:.3g})"
    )
    return table


class RenewalCache:
    """Directory of renewal tables keyed by (model hash, grid, K_max, N, seed)."""

    def __init__(self, directory: Union[str, Path]) -> None:
        self.directory = Path(directory)

    def _paths(self, key: str) -> tuple:
        stem = self.directory / f"renewal-{key}"
        return stem.with_suffix(".csv"), stem.with_suffix(".json")

    def get(self, key: str) -> Optional[RenewalTable]:
        csv_path, meta_path = self._paths(key)
        if not (csv_path.exists() and meta_path.exists()):
            return None
        logger.debug(f"Renewal cache hit for {key[:12]}")
        metadata = read_json(meta_path)
        return RenewalTable.from_csv(csv_path, **metadata)

    def put(self, table: RenewalTable) -> None:
        if not table.key:
            raise ConfigError("only keyed renewal tables can be cached")
        csv_path, meta_path = self._paths(table.key)
        table.to_csv(csv_path)
        write_json_atomic(meta_path, table.metadata())

    def get_or_compute(
        self,
        model: EnvModel,
        grid: Sequence[float],
        k_max: int,
        replicas: int,
        seed: int = 0,
        pool: Optional[ReplicaPool] = None,
    ) -> RenewalTable:
        grid_arr = _validate_grid(grid)
        key = renewal_key(tilted_view(model), grid_arr, k_max, replicas, seed)
        table = self.get(key)
        if table is None:
            table = renewal_function(model, grid_arr, k_max, replicas, seed, pool)
            self.put(table)
        return table


@dataclass(frozen=True)
class HarmonicityCheck:
    """E[V(x + X); x + X >= 0] against V(x) on a set of points."""

    points: np.ndarray
    expected: np.ndarray
    stderr: np.ndarray
    values: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.expected - self.values) / self.values

    @property
    def max_residual(self) -> float:
        return float(self.residual.max())


def harmonicity_residual(
    table: RenewalTable,
    model: EnvModel,
    points: Sequence[float],
    replicas: int,
    rng: np.random.Generator,
    chunk: int = 100_000,
) -> HarmonicityCheck:
    """Check V(x) = E[V(x + X); x + X >= 0] with one increment X per replica."""
    pts = np.asarray(points, dtype=float)
    tilted = tilted_view(model)
    sums = np.zeros(pts.size)
    squares = np.zeros(pts.size)
    done = 0
    while done < replicas:
        size = min(chunk, replicas - done)
        X = tilted.rho_law.sample(rng, size)
        shifted = np.asarray(table(pts[:, None] + X[None, :]))
        sums += shifted.sum(axis=1)
        squares += (shifted**2).sum(axis=1)
        done += size
    mean = sums / replicas
    var = np.maximum(squares / replicas - mean**2, 0.0)
    var = var * replicas / max(replicas - 1, 1)
    return HarmonicityCheck(
        points=pts,
        expected=mean,
        stderr=np.sqrt(var / replicas),
        values=np.asarray(table(pts)),
    )


def plus_weights(table: Optional[RenewalTable], S: np.ndarray) -> np.ndarray:
    """V(S_n) 1{L_n >= 0} per replica of a (N, n + 1) walk batch."""
    if table is None:
        raise MissingRenewalTableError("E^+ expectations need a renewal table")
    S = np.asarray(S, dtype=float)
    return np.asarray(table(S[:, -1])) * (S.min(axis=1) >= 0)


def plus_expect(
    model: EnvModel,
    g: Callable[[EnvironmentPaths], np.ndarray],
    n: int,
    replicas: int,
    rng: np.random.Generator,
    table: Optional[RenewalTable],
) -> Estimate:
    """
    E^+[g] = E[g V(S_n); L_n >= 0] over tilted environment prefixes.

    Raises:
        MissingRenewalTableError: If table is None
    """
    if table is None:
        raise MissingRenewalTableError("plus_expect needs a renewal table")
    if n < 1 or replicas < 2:
        raise ConfigError("plus_expect needs n >= 1 and replicas >= 2")
    paths = sample_paths(tilted_view(model), rng, replicas, n)
    values = np.asarray(g(paths), dtype=float) * plus_weights(table, paths.S)
    return Estimate(
        float(values.mean()), float(values.std(ddof=1) / math.sqrt(replicas)), replicas
    )
