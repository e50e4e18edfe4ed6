"""I.i.d. random environments of linear-fractional laws.

An EnvModel draws environment letters (M, w) with a fixed common left
eigenvector v: the log Perron root X = ln rho comes from rho_law, a raw
positive matrix A from shape_law and the shift from w_law, and the columns of A
are reweighted so that vM = rho v.  Draws of (A, w) that violate the ratio bound
or do not give a proper law are redrawn for the same rho, which keeps the law
of X (and hence the exponential tilt) exact.

Typical usage example:
    >>> model = EnvModel.from_dict(json.load(open("strong.json"))["model"])
    >>> report = classify(model)
    >>> paths = sample_paths(tilt(model), rng, replicas=1000, length=24)
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .accumulators import Estimate
from .exceptions import ConfigError, RejectionExhaustedError, UnsupportedFamilyError
from .linfrac import (
    LinFracLaw,
    QuenchedState,
    advance,
    initial_state,
    is_proper,
    perron_root,
)
from .parallel import stream

logger = logging.getLogger("mbpre")

DEFAULT_MAX_ATTEMPTS = 1000
DRIFT_TOL = 1e-9
RATIO_SLACK = 1e-12

ANALYTIC_FAMILIES = ("gaussian_logrho",)
RHO_FAMILIES = ANALYTIC_FAMILIES + ("uniform_logrho",)
SHIFT_FAMILIES = ("uniform", "lognormal", "constant")


class Regime(str, Enum):
    STRONGLY_SUPERCRITICAL = "strongly_supercritical"
    INTERMEDIATELY_SUPERCRITICAL = "intermediately_supercritical"
    WEAKLY_SUPERCRITICAL = "weakly_supercritical"
    NOT_SUPERCRITICAL = "not_supercritical"


@dataclass(frozen=True)
class RhoLaw:
    """
    Law of X = ln rho.

    gaussian_logrho (X ~ Normal(mu, sigma^2)) has closed-form kappa and tilt.
    uniform_logrho (X ~ Uniform[low, high]) can only be tilted through
    importance weights.
    """

    family: str = "gaussian_logrho"
    mu: float = 0.0
    sigma: float = 0.0
    low: Optional[float] = None
    high: Optional[float] = None

    def __post_init__(self) -> None:
        if self.family not in RHO_FAMILIES:
            raise UnsupportedFamilyError(
                f"rho_law family {self.family!r} is not supported; "
                f"use one of {', '.join(RHO_FAMILIES)}"
            )
        if self.family == "gaussian_logrho":
            if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
                raise ConfigError("rho_law mu and sigma must be finite")
            if self.sigma < 0:
                raise ConfigError(
                    f"rho_law sigma must be nonnegative, got {self.sigma}"
                )
        else:
            if self.low is None or self.high is None or not self.low < self.high:
                raise ConfigError("uniform_logrho needs low < high")

    @property
    def analytic(self) -> bool:
        return self.family in ANALYTIC_FAMILIES

    @property
    def kappa(self) -> float:
        """E[e^{-X}]."""
        if self.family == "gaussian_logrho":
            return math.exp(-self.mu + self.sigma**2 / 2)
        a, b = float(self.low), float(self.high)  # type: ignore[arg-type]
        return (math.exp(-a) - math.exp(-b)) / (b - a)

    @property
    def rho_max(self) -> float:
        """Upper end of the support of rho (inf when unbounded)."""
        if self.family == "gaussian_logrho":
            return math.exp(self.mu) if self.sigma == 0 else math.inf
        return math.exp(float(self.high))  # type: ignore[arg-type]

    @property
    def mean(self) -> float:
        if self.family == "gaussian_logrho":
            return self.mu
        return (float(self.low) + float(self.high)) / 2  # type: ignore[arg-type]

    def tilted(self) -> "RhoLaw":
        """The law of X reweighted by e^{-X} / kappa."""
        if not self.analytic:
            raise UnsupportedFamilyError(
                f"{self.family} has no closed-form tilt; use importance weights"
            )
        return replace(self, mu=self.mu - self.sigma**2)

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        if self.family == "gaussian_logrho":
            return rng.normal(self.mu, self.sigma, size)
        return rng.uniform(self.low, self.high, size)

    def to_dict(self) -> Dict[str, Any]:
        if self.family == "gaussian_logrho":
            return {"family": self.family, "mu": self.mu, "sigma": self.sigma}
        return {"family": self.family, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class ShapeLaw:
    """Raw matrix entries i.i.d. Uniform[lo, hi]."""

    lo: float = 1.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.lo <= self.hi) or not math.isfinite(self.hi):
            raise ConfigError(
                f"shape_law needs 0 < lo <= hi, got [{self.lo}, {self.hi}]"
            )

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        if self.lo == self.hi:
            return np.full(size, self.lo)
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class ShiftLaw:
    """
    Law of the shift entries.

    Families: uniform {low, high}, lognormal {mean, sigma} (of the log) and
    constant {value}.  With relative=True the drawn vector is multiplied by rho.
    """

    family: str = "constant"
    params: Dict[str, float] = field(default_factory=lambda: {"value": 1.0})
    relative: bool = False

    def __post_init__(self) -> None:
        if self.family not in SHIFT_FAMILIES:
            raise UnsupportedFamilyError(
                f"w_law family {self.family!r} is not supported; "
                f"use one of {', '.join(SHIFT_FAMILIES)}"
            )
        required = {
            "uniform": ("low", "high"),
            "lognormal": ("mean", "sigma"),
            "constant": ("value",),
        }[self.family]
        missing = [name for name in required if name not in self.params]
        if missing:
            raise ConfigError(f"w_law {self.family} is missing {', '.join(missing)}")
        p = self.params
        if self.family == "uniform" and not 0 <= p["low"] <= p["high"]:
            raise ConfigError("w_law uniform needs 0 <= low <= high")
        if self.family == "lognormal" and p["sigma"] < 0:
            raise ConfigError("w_law lognormal sigma must be nonnegative")
        if self.family == "constant" and p["value"] < 0:
            raise ConfigError("w_law constant value must be nonnegative")

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        p = self.params
        if self.family == "uniform":
            return rng.uniform(p["low"], p["high"], size)
        if self.family == "lognormal":
            return rng.lognormal(p["mean"], p["sigma"], size)
        return np.full(size, float(p["value"]))

    @property
    def entry_max(self) -> float:
        """Upper end of the support of one raw entry (inf when unbounded)."""
        p = self.params
        if self.family == "uniform":
            return float(p["high"])
        if self.family == "lognormal":
            return math.exp(p["mean"]) if p["sigma"] == 0 else math.inf
        return float(p["value"])

    def admits(self, rho: float, K: int) -> bool:
        """
        Whether a letter with Perron root rho can be proper under this law.

        The v-weighted mean of the row sums of M is rho, so some row sum is at
        least rho and properness needs rho <= 1 + |w| <= 1 + K * entry_max.
        """
        bound = K * self.entry_max
        if self.relative:
            return bound >= 1 or rho * (1 - bound) <= 1
        return rho <= 1 + bound

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "params": dict(self.params),
            "relative": self.relative,
        }


@dataclass(frozen=True)
class EnvModel:
    """
    Distribution of one environment letter.

    Attributes:
        K: Number of types
        v: Common left eigenvector (strictly positive)
        alpha: Ratio bound in (0, 1)
        rho_law: Law of X = ln rho
        shape_law: Law of the raw matrix entries
        w_law: Law of the shift vector
        seed: Seed used by model-level Monte Carlo checks
        tilted: Whether rho_law already is the tilted law
        max_attempts: Redraw rounds allowed before RejectionExhaustedError
    """

    K: int
    v: Tuple[float, ...]
    alpha: float
    rho_law: RhoLaw
    shape_law: ShapeLaw = field(default_factory=ShapeLaw)
    w_law: ShiftLaw = field(default_factory=ShiftLaw)
    seed: int = 0
    tilted: bool = False
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        if self.K < 1:
            raise ConfigError(f"K must be at least 1, got {self.K}")
        if len(self.v) != self.K:
            raise ConfigError(f"v must have length K = {self.K}")
        if any(not (x > 0 and math.isfinite(x)) for x in self.v):
            raise ConfigError("v must be strictly positive and finite")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        rho_max = self.rho_law.rho_max
        if not self.w_law.admits(rho_max, self.K):
            scale = " * rho" if self.w_law.relative else ""
            raise ConfigError(
                f"w_law cannot make letters proper: rho reaches {rho_max:g} but "
                f"properness needs rho <= 1 + |w| and |w| is at most "
                f"{self.K * self.w_law.entry_max:g}{scale}; "
                f"use a relative w_law or a larger shift"
            )

    @property
    def beta(self) -> float:
        return (1 - self.alpha**2) / (1 + self.alpha**2)

    @property
    def v_array(self) -> np.ndarray:
        return np.array(self.v)

    @property
    def kappa(self) -> float:
        return self.rho_law.kappa

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "v": list(self.v),
            "alpha": self.alpha,
            "rho_law": self.rho_law.to_dict(),
            "shape_law": {"lo": self.shape_law.lo, "hi": self.shape_law.hi},
            "w_law": self.w_law.to_dict(),
            "seed": self.seed,
            "tilted": self.tilted,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvModel":
        """
        Build a model from its JSON document.

        Raises:
            ConfigError: If a field is missing or malformed
            UnsupportedFamilyError: If a law family is unknown
        """
        try:
            rho = dict(data["rho_law"])
            default_w = {"family": "constant", "params": {"value": 1.0}}
            w_law = dict(data.get("w_law", default_w))
            shape = data.get("shape_law", {"lo": 1.0, "hi": 1.0})
            return cls(
                K=int(data["K"]),
                v=tuple(data["v"]),
                alpha=float(data["alpha"]),
                rho_law=RhoLaw(**rho),
                shape_law=ShapeLaw(lo=float(shape["lo"]), hi=float(shape["hi"])),
                w_law=ShiftLaw(
                    family=w_law.get("family", "constant"),
                    params={k: float(x) for k, x in w_law.get("params", {}).items()},
                    relative=bool(w_law.get("relative", False)),
                ),
                seed=int(data.get("seed", 0)),
                tilted=bool(data.get("tilted", False)),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"invalid model document: {e}", original_exception=e)

    def model_hash(self) -> str:
        """sha256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class LetterBatch:
    """A batch of environment letters sharing the leading shape of X."""

    X: np.ndarray
    M: np.ndarray
    w: np.ndarray

    def law(self, index: Any) -> LinFracLaw:
        return LinFracLaw(M=self.M[index], w=self.w[index])


@dataclass(frozen=True, eq=False)
class EnvironmentPaths:
    """
    Environment prefixes of equal length for a batch of replicas.

    Attributes:
        X: (N, n) log Perron roots
        M: (N, n, K, K) mean matrices
        w: (N, n, K) shifts
    """

    X: np.ndarray
    M: np.ndarray
    w: np.ndarray

    @property
    def replicas(self) -> int:
        return int(self.X.shape[0])

    @property
    def length(self) -> int:
        return int(self.X.shape[1])

    @property
    def S(self) -> np.ndarray:
        """(N, n + 1) walk S_0..S_n with S_0 = 0."""
        S = np.zeros((self.replicas, self.length + 1))
        np.cumsum(self.X, axis=1, out=S[:, 1:])
        return S

    def laws(self, replica: int) -> list:
        return [
            LinFracLaw(M=self.M[replica, k], w=self.w[replica, k])
            for k in range(self.length)
        ]

    def fold(
        self, v: np.ndarray, start: int = 0, stop: Optional[int] = None
    ) -> QuenchedState:
        """Batched quenched state of letters start+1..stop (0-based slice)."""
        stop = self.length if stop is None else stop
        state = initial_state(v, batch=self.replicas)
        for k in range(start, stop):
            state = advance(state, self.M[:, k], self.w[:, k], self.X[:, k])
        return state


def reweight_columns(A: np.ndarray, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    M(i, j) = A(i, j) rho v_j / sum_i v_i A(i, j), so that vM = rho v.

    Args:
        A: (..., K, K) positive raw matrices
        rho: Perron roots, broadcastable to the batch shape
        v: (K,) left eigenvector
    """
    A = np.asarray(A, dtype=float)
    weights = np.einsum("i,...ij->...j", v, A)
    return A * np.asarray(rho, dtype=float)[..., None, None] * v / weights[..., None, :]


def build_law(
    A: np.ndarray,
    rho: float,
    w: Sequence[float],
    v: Sequence[float],
    alpha: Optional[float] = None,
) -> LinFracLaw:
    """Construct one letter from a raw matrix and a Perron root."""
    v_arr = np.asarray(v, dtype=float)
    return LinFracLaw(
        M=reweight_columns(A, rho, v_arr), w=np.asarray(w, dtype=float), alpha=alpha
    )


def _admissible(M: np.ndarray, w: np.ndarray, alpha: float) -> np.ndarray:
    lo = M.min(axis=(-2, -1))
    hi = M.max(axis=(-2, -1))
    ratio_ok = (lo > 0) & (hi <= lo * (1.0 / alpha) * (1 + RATIO_SLACK))
    return ratio_ok & np.asarray(is_proper(M, w), dtype=bool)


def sample_letters(
    model: EnvModel, rng: np.random.Generator, size: Union[int, Tuple[int, ...]]
) -> LetterBatch:
    """
    Draw a batch of letters; (A, w) is redrawn per letter until admissible.

    Raises:
        RejectionExhaustedError: If some letter is still inadmissible after
            model.max_attempts rounds
    """
    shape = (size,) if isinstance(size, int) else tuple(size)
    K = model.K
    v = model.v_array
    X = model.rho_law.sample(rng, shape)
    rho = np.exp(X).ravel()
    count = rho.size

    M = np.empty((count, K, K))
    w = np.empty((count, K))
    pending = np.arange(count)
    rounds = 0
    while pending.size:
        if rounds == model.max_attempts:
            raise RejectionExhaustedError(
                f"{pending.size} letters still violate the ratio bound or properness "
                f"after {rounds} redraws; check alpha against shape_law and "
                f"w_law against rho_law",
                attempts=rounds,
            )
        rounds += 1
        A = model.shape_law.sample(rng, (pending.size, K, K))
        w_try = model.w_law.sample(rng, (pending.size, K))
        if model.w_law.relative:
            w_try = w_try * rho[pending, None]
        M_try = reweight_columns(A, rho[pending], v)
        ok = _admissible(M_try, w_try, model.alpha)
        M[pending[ok]] = M_try[ok]
        w[pending[ok]] = w_try[ok]
        pending = pending[~ok]

    if rounds > 1:
        logger.debug(f"Letter batch of {count} needed {rounds} rounds of redraws")
    return LetterBatch(X=X, M=M.reshape(shape + (K, K)), w=w.reshape(shape + (K,)))


def construct_law(model: EnvModel, rng: np.random.Generator) -> LinFracLaw:
    """
    Draw one environment letter.

    The returned law satisfies vM = rho v and the alpha ratio bound.
    """
    batch = sample_letters(model, rng, 1)
    return LinFracLaw(M=batch.M[0], w=batch.w[0], alpha=model.alpha)


def sample_paths(
    model: EnvModel, rng: np.random.Generator, replicas: int, length: int
) -> EnvironmentPaths:
    """Draw replicas independent environment prefixes of the given length."""
    batch = sample_letters(model, rng, (replicas, length))
    return EnvironmentPaths(X=batch.X, M=batch.M, w=batch.w)


def tilt(model: EnvModel) -> EnvModel:
    """
    Model under the measure reweighted by e^{-X} / kappa.

    Only rho_law changes since (A, w) are independent of rho; for Gaussian X
    the tilted law is Normal(mu - sigma^2, sigma^2).

    Raises:
        UnsupportedFamilyError: If rho_law has no closed-form tilt
    """
    tilted = replace(model, rho_law=model.rho_law.tilted(), tilted=True)
    logger.debug(f"Tilted rho_law {model.rho_law} -> {tilted.rho_law}")
    return tilted


def tilted_view(model: EnvModel) -> EnvModel:
    """model itself if already tilted, else tilt(model)."""
    return model if model.tilted else tilt(model)


def vartheta(M: np.ndarray, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched second-moment constant 1 + rho^{-2} sum_i v_i (2|M(i)||w| + |M(i)|)."""
    M = np.asarray(M, dtype=float)
    w = np.asarray(w, dtype=float)
    rows = M.sum(axis=-1)
    rho = np.einsum("i,...ij->...j", v, M)[..., 0] / v[0]
    inner = np.einsum("i,...i->...", v, 2 * rows * w.sum(axis=-1)[..., None] + rows)
    return 1.0 + inner / rho**2


def compute_vartheta(law: LinFracLaw, v: Sequence[float]) -> float:
    """
    1 + rho^{-2} sum_z sum_i v_i sum_{j,k} z_j z_k F^{(i)}[z] in closed form.

    The second factorial moments of a linear-fractional law are
    M(i,j) w_k + M(i,k) w_j, and the diagonal adds M(i,j).
    """
    v_arr = np.asarray(v, dtype=float)
    perron_root(law, v_arr)
    return float(vartheta(law.M, law.w, v_arr))


@dataclass(frozen=True)
class RegimeReport:
    """Regime of a model and the quantities it was read from."""

    kappa: float
    drift: float
    drift_tilted: float
    regime: Regime
    supercritical: bool
    eigen_gap_condition: bool
    vartheta_moment: float
    drift_stderr: float = 0.0
    method: str = "analytic"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kappa": self.kappa,
            "drift": self.drift,
            "drift_tilted": self.drift_tilted,
            "drift_stderr": self.drift_stderr,
            "regime": self.regime.value,
            "supercritical": self.supercritical,
            "eigen_gap_condition": self.eigen_gap_condition,
            "vartheta_moment": self.vartheta_moment,
            "method": self.method,
        }


def _regime(drift: float, drift_tilted: float, band: float) -> Regime:
    if drift < 0:
        return Regime.NOT_SUPERCRITICAL
    if drift_tilted > band:
        return Regime.STRONGLY_SUPERCRITICAL
    if drift_tilted < -band:
        return Regime.WEAKLY_SUPERCRITICAL
    return Regime.INTERMEDIATELY_SUPERCRITICAL


def _weighted_sample(
    model: EnvModel, rng: np.random.Generator, size: int
) -> Tuple[LetterBatch, np.ndarray]:
    """Letters with weights whose average is the tilted expectation."""
    if model.tilted or model.rho_law.analytic:
        batch = sample_letters(tilted_view(model), rng, size)
        return batch, np.ones(size)
    batch = sample_letters(model, rng, size)
    return batch, np.exp(-batch.X) / model.kappa


def classify(
    model: EnvModel,
    mc_budget: int = 10_000,
    epsilon: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> RegimeReport:
    """
    Classify a model as strongly, intermediately or weakly supercritical.

    For Gaussian X, kappa = e^{-mu + sigma^2/2} and the tilted drift is
    mu - sigma^2, and the regime is read from its sign at tolerance 1e-9.
    Other families are classified from mc_budget draws with a 3-stderr band.
    The tilted moment E_P[ln^{2+eps} vartheta] is always a Monte Carlo estimate.

    Args:
        model: Untilted model
        mc_budget: Draws for the Monte Carlo parts
        epsilon: Exponent margin of the vartheta moment
        rng: Generator; defaults to a stream derived from model.seed
    """
    if mc_budget < 2:
        raise ConfigError("mc_budget must be at least 2")
    if model.tilted:
        raise ConfigError("classify expects the untilted model")
    rng = rng if rng is not None else stream(model.seed, "classify")
    law = model.rho_law

    if law.analytic:
        kappa = law.kappa
        drift = law.mean
        drift_tilted = law.tilted().mean
        stderr = 0.0
        band = DRIFT_TOL
        method = "analytic"
    else:
        X = law.sample(rng, mc_budget)
        weights = np.exp(-X)
        kappa = law.kappa
        drift = law.mean
        drift_tilted = float(np.mean(weights * X) / kappa)
        stderr = float(np.std(weights * X, ddof=1) / kappa / math.sqrt(mc_budget))
        band = 3 * stderr
        method = "monte_carlo"

    batch, weights = _weighted_sample(model, rng, mc_budget)
    theta = vartheta(batch.M, batch.w, model.v_array)
    moment = float(np.mean(weights * np.log(theta) ** (2 + epsilon)))

    regime = _regime(drift, drift_tilted, band)
    report = RegimeReport(
        kappa=kappa,
        drift=drift,
        drift_tilted=drift_tilted,
        regime=regime,
        supercritical=drift > 0,
        eigen_gap_condition=drift_tilted
        < math.log((1 + model.alpha**2) / (1 - model.alpha**2)),
        vartheta_moment=moment,
        drift_stderr=stderr,
        method=method,
    )
    logger.debug(f"Classified model: {report}")
    return report


def weighted_expect(
    model: EnvModel,
    f: Callable[[EnvironmentPaths], np.ndarray],
    n: int,
    replicas: int,
    rng: np.random.Generator,
    method: str = "auto",
) -> Estimate:
    """
    Estimate E_P[f] over environment prefixes of length n.

    Args:
        model: Untilted model
        f: Maps an EnvironmentPaths batch to one value per replica
        n: Prefix length (at least 1)
        replicas: Number of replicas (at least 1)
        rng: Random generator
        method: "tilted" samples the tilted model, "importance" weights
            untilted samples by e^{-S_n} / kappa^n, "auto" prefers "tilted"

    Returns:
        Mean and standard error
    """
    if n < 1 or replicas < 1:
        raise ConfigError("weighted_expect needs n >= 1 and replicas >= 1")
    if method == "auto":
        method = "tilted" if model.rho_law.analytic else "importance"
    if method == "tilted":
        paths = sample_paths(tilt(model), rng, replicas, n)
        values = np.asarray(f(paths), dtype=float)
    elif method == "importance":
        paths = sample_paths(model, rng, replicas, n)
        log_weight = -paths.S[:, -1] - n * math.log(model.kappa)
        values = np.exp(log_weight) * np.asarray(f(paths), dtype=float)
    else:
        raise ConfigError(f"unknown method {method!r}")
    stderr = 0.0
    if replicas > 1:
        stderr = float(np.std(values, ddof=1) / math.sqrt(replicas))
    return Estimate(float(values.mean()), stderr, replicas)


@dataclass(frozen=True)
class MomentReport:
    """
    Integrability diagnostics of a model.

    Attributes:
        shift_moment: Estimate of E[e^{-X} |X + ln|w||^{1+eps}]
        log_survival: Estimate of E_P[ln sum_i Q_1(i)]
        min_survival: Smallest single-letter survival probability Q_1(i) seen
        shift_ok: Whether the shift moment looks finite
        survival_ok: Whether min_survival stays above the floor
    """

    shift_moment: Estimate
    log_survival: Estimate
    min_survival: float
    shift_ok: bool
    survival_ok: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shift_moment": self.shift_moment.to_dict(),
            "log_survival": self.log_survival.to_dict(),
            "min_survival": self.min_survival,
            "shift_ok": self.shift_ok,
            "survival_ok": self.survival_ok,
        }


def check_moment_conditions(
    model: EnvModel,
    draws: int = 10_000,
    epsilon: float = 1.0,
    floor: float = 1e-8,
    rng: Optional[np.random.Generator] = None,
) -> MomentReport:
    """
    Check the shift-moment and non-degeneracy conditions numerically.

    Failures are logged as warnings; they slow convergence down but do not
    invalidate the estimators.
    """
    if draws < 2:
        raise ConfigError("draws must be at least 2")
    if model.tilted:
        raise ConfigError("check_moment_conditions expects the untilted model")
    rng = rng if rng is not None else stream(model.seed, "moments")
    batch = sample_letters(model, rng, draws)

    abs_w = batch.w.sum(axis=-1)
    with np.errstate(divide="ignore"):
        gap = np.abs(batch.X + np.log(abs_w))
    shift_values = np.exp(-batch.X) * gap ** (1 + epsilon)
    shift_ok = bool(np.all(np.isfinite(shift_values)))
    finite = np.where(np.isfinite(shift_values), shift_values, 0.0)
    shift = Estimate(
        float(shift_values.mean()) if shift_ok else float("inf"),
        float(np.std(finite, ddof=1) / math.sqrt(draws)),
        draws,
    )

    Q1 = batch.M.sum(axis=-1) / (1.0 + abs_w)[..., None]
    weights = np.exp(-batch.X) / model.kappa
    log_values = weights * np.log(Q1.sum(axis=-1))
    log_survival = Estimate(
        float(log_values.mean()),
        float(np.std(log_values, ddof=1) / math.sqrt(draws)),
        draws,
    )
    min_survival = float(Q1.min())
    survival_ok = min_survival >= floor

    if not shift_ok:
        logger.warning(
            "E[e^{-X}|X + ln|w||^(1+eps)] appears infinite (zero shifts drawn); "
            "almost sure convergence of the normalized shifts may fail"
        )
    if not survival_ok:
        logger.warning(
            f"Single-letter survival probability drops to {min_survival:.3g} "
            f"(< {floor:g}); the non-degeneracy condition may fail"
        )
    return MomentReport(shift, log_survival, min_survival, shift_ok, survival_ok)
