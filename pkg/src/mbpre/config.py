"""
Experiment configuration documents.

A run is described by one JSON document naming the model, the suite, the seed,
the Monte Carlo budgets, suite parameters, verdict tolerances and the output
location.  Documents are checked against the packaged JSON schema when
jsonschema is installed and always checked semantically.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

from .environment import EnvModel
from .exceptions import ArtifactIOError, ConfigError, MbpreError
from .limits import Event, Horizons
from .parallel import DEFAULT_SHARD_SIZE
from .utils import config_hash, read_json

logger = logging.getLogger("mbpre")

# Optional schema validation
try:
    import jsonschema

    SCHEMA_VALIDATION_AVAILABLE = True
except ImportError:
    SCHEMA_VALIDATION_AVAILABLE = False

logger.debug(f"JSON schema validation: {SCHEMA_VALIDATION_AVAILABLE}")

SCHEMA_PATH = Path(__file__).with_name("schema") / "experiment.schema.json"
OUTPUT_FORMATS = ("csv", "jsonl")


class Suite(str, Enum):
    QUENCHED_SELFTEST = "quenched-selftest"
    STRONG_RATIO = "strong-ratio"
    STRONG_P = "strong-p"
    UNIFORM = "uniform"
    INTERM_RATIO = "interm-ratio"
    INTERM_Q = "interm-q"
    RENEWAL = "renewal"


@dataclass(frozen=True)
class RenewalBudget:
    """Grid, truncation and replica count of the renewal function estimate."""

    grid: Tuple[float, ...] = tuple(0.5 * k for k in range(11))
    k_max: int = 10_000
    replicas: int = 1_000_000
    check_points: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        if not self.grid or self.grid[0] != 0.0:
            raise ConfigError("renewal grid must start at 0")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ConfigError("renewal grid must be strictly ascending")
        if self.k_max < 1 or self.replicas < 2 or self.check_points < 1:
            raise ConfigError(
                "renewal k_max, replicas and check_points must be positive"
            )


@dataclass(frozen=True)
class Budgets:
    """
    Monte Carlo budgets.

    Attributes:
        replicas: Tilted environments per estimate
        n_grid: Generations at which ratios are evaluated
        shard_size: Replicas per shard (fixes the random streams)
        horizons: Truncation horizons of the limit estimators
        renewal: Renewal function budget
        selftest_fixtures: Random environments checked by quenched-selftest
        selftest_n: Largest n checked by quenched-selftest
        selftest_degree: Largest total size compared against the exact series
    """

    replicas: int = 100_000
    n_grid: Tuple[int, ...] = (24, 36)
    shard_size: int = DEFAULT_SHARD_SIZE
    horizons: Horizons = field(default_factory=Horizons)
    renewal: RenewalBudget = field(default_factory=RenewalBudget)
    selftest_fixtures: int = 20
    selftest_n: int = 4
    selftest_degree: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.replicas < 2:
            raise ConfigError("replicas must be at least 2")
        if not self.n_grid or min(self.n_grid) < 1:
            raise ConfigError("n_grid must hold at least one n >= 1")
        if self.shard_size < 1:
            raise ConfigError("shard_size must be at least 1")
        if min(self.selftest_fixtures, self.selftest_n, self.selftest_degree) < 1:
            raise ConfigError("selftest budgets must be positive")


@dataclass(frozen=True)
class Choice:
    """An (i, l, t) triple of the split-time suites."""

    i: int
    l: int
    t: float


@dataclass(frozen=True)
class Params:
    """Suite parameters: types, window size, split fraction and supports."""

    i: int = 0
    l: int = 0
    c: int = 5
    t: float = 0.5
    z_max: int = 4
    events: Tuple[Event, ...] = (1, 2, 3)
    choices: Tuple[Choice, ...] = ()

    def __post_init__(self) -> None:
        events = tuple(
            e if isinstance(e, int) else tuple(int(x) for x in e) for e in self.events
        )
        object.__setattr__(self, "events", events)
        if self.c < 1:
            raise ConfigError("c must be at least 1")
        if not 0 < self.t < 1:
            raise ConfigError("t must lie in (0, 1)")
        if self.z_max < 1:
            raise ConfigError("z_max must be at least 1")
        for e in events:
            if isinstance(e, int) and e < 1:
                raise ConfigError(f"total-size event {e} must be at least 1")
        for choice in self.choices:
            if not 0 < choice.t < 1:
                raise ConfigError("every choice needs t in (0, 1)")

    def split_choices(self) -> List[Choice]:
        return list(self.choices) or [Choice(self.i, self.l, self.t)]


@dataclass(frozen=True)
class Tolerances:
    """Verdict tolerances; defaults follow the acceptance budgets."""

    sigmas: float = 3.0
    oracle: float = 1e-9
    identity: float = 1e-12
    strong_drift: float = 0.05
    interm_drift: float = 0.10
    uniform_strong: float = 0.02
    uniform_interm: float = 0.03
    mass: float = 0.02
    harmonic: float = 0.02
    renewal_origin: float = 0.01
    tail_bound: float = 1e-6

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not value > 0:
                raise ConfigError(f"tolerance {name} must be positive")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    formats: Tuple[str, ...] = OUTPUT_FORMATS

    def __post_init__(self) -> None:
        object.__setattr__(self, "formats", tuple(self.formats))
        unknown = set(self.formats) - set(OUTPUT_FORMATS)
        if unknown:
            raise ConfigError(f"unknown output formats: {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A validated experiment.

    Attributes:
        model: Environment model
        suite: Suite to run
        seed: Experiment seed (mandatory in documents)
        budgets: Monte Carlo budgets
        params: Suite parameters
        tolerances: Verdict tolerances
        output: Output directory and formats
        document: The source document, used for hashing
    """

    model: EnvModel
    suite: Suite
    seed: int
    budgets: Budgets = field(default_factory=Budgets)
    params: Params = field(default_factory=Params)
    tolerances: Tolerances = field(default_factory=Tolerances)
    output: OutputConfig = field(default_factory=OutputConfig)
    document: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        K = self.model.K
        for name in ("i", "l"):
            if not 0 <= getattr(self.params, name) < K:
                raise ConfigError(f"params.{name} out of range for K = {K}")
        for choice in self.params.choices:
            if not (0 <= choice.i < K and 0 <= choice.l < K):
                raise ConfigError(f"choice {choice} out of range for K = {K}")
        for e in self.params.events:
            if isinstance(e, tuple) and (len(e) != K or min(e) < 0 or sum(e) < 1):
                raise ConfigError(f"vector event {e} must be a nonzero {K}-vector")
        if self.suite is Suite.STRONG_P and len(self.params.split_choices()) < 2:
            logger.warning(
                "strong-p with a single (i, l, t) choice skips the agreement check"
            )
        if self.suite is Suite.QUENCHED_SELFTEST and self.model.K != 2:
            logger.warning("quenched-selftest is calibrated for K = 2 fixtures")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """
        Validate and build a config from its JSON document.

        Raises:
            ConfigError: If the document is malformed or inconsistent
        """
        validate_document(data)
        try:
            budgets = dict(data.get("budgets", {}))
            horizons = Horizons(**budgets.pop("horizons", {}))
            renewal = RenewalBudget(**budgets.pop("renewal", {}))
            params = dict(data.get("params", {}))
            choices = tuple(Choice(**c) for c in params.pop("choices", ()))
            return cls(
                model=EnvModel.from_dict(data["model"]),
                suite=Suite(data["suite"]),
                seed=int(data["seed"]),
                budgets=Budgets(horizons=horizons, renewal=renewal, **budgets),
                params=Params(choices=choices, **params),
                tolerances=Tolerances(**data.get("tolerances", {})),
                output=OutputConfig(**data.get("output", {})),
                document=dict(data),
            )
        except ConfigError:
            raise
        except MbpreError as e:
            raise ConfigError(str(e), original_exception=e)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid experiment document: {e}", original_exception=e)

    @property
    def config_hash(self) -> str:
        return config_hash(self.document)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with a different seed (the document is updated too)."""
        document = dict(self.document, seed=int(seed))
        return ExperimentConfig.from_dict(document)


def load_schema() -> Dict[str, Any]:
    return read_json(SCHEMA_PATH)


def validate_document(data: Mapping[str, Any]) -> None:
    """
    Structural validation against the packaged schema.

    Without jsonschema only the mandatory keys are checked and a warning is
    logged.

    Raises:
        ConfigError: If the document does not match the schema
    """
    if not isinstance(data, Mapping):
        raise ConfigError("an experiment document must be a JSON object")
    if not SCHEMA_VALIDATION_AVAILABLE:
        logger.warning("jsonschema is not installed; only required keys are checked")
        missing = [key for key in ("model", "suite", "seed") if key not in data]
        if missing:
            raise ConfigError(f"experiment document is missing {', '.join(missing)}")
        return
    try:
        jsonschema.validate(instance=dict(data), schema=load_schema())
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(
            f"schema violation at {location}: {e.message}", original_exception=e
        )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate an experiment document.

    Raises:
        ConfigError: If the file is missing, not JSON or not a valid experiment
    """
    try:
        data = read_json(path)
    except ArtifactIOError as e:
        raise ConfigError(str(e), original_exception=e)
    config = ExperimentConfig.from_dict(data)
    logger.debug(f"Loaded {config.suite.value} config from {path}")
    return config
