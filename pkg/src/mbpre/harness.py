"""
Batch runner for verification suites.

run() executes one suite of an ExperimentConfig, writes results.jsonl, CSV
tables, plot data and an atomically written manifest.json, and derives
pass/fail verdicts from the tolerances recorded in the config.  Numeric
artifacts carry no timestamps, so two runs with the same config and seed
produce identical results.jsonl files.
"""

import itertools
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .accumulators import Estimate, combined_stderr
from .config import ExperimentConfig, Suite
from .environment import Regime, classify, sample_letters
from .exceptions import MbpreError
from .intermediate import (
    conditional_law_at_minimum,
    estimate_interm_delta,
    estimate_q,
    k_independence,
    verify_interm_ratio,
)
from .limits import RatioTable, enumerate_support, event_label, unit
from .linfrac import compose, left_eigen_residual, local_prob_total, local_prob_vector
from .parallel import ReplicaPool, stream
from .series import composed_series
from .strong import (
    estimate_strong_constants,
    require_regime,
    verify_p,
    verify_strong_ratio,
    verify_uniform,
)
from .utils import write_csv, write_json_atomic, write_jsonl
from .walks import RenewalCache, RenewalTable, harmonicity_residual, renewal_function

logger = logging.getLogger("mbpre")

PathLike = Union[str, Path]
PLOT_COLUMNS = ("n", "series", "value", "stderr")


@dataclass(frozen=True)
class Verdict:
    """One pass/fail check against a recorded tolerance."""

    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "detail": self.detail,
        }


@dataclass
class SuiteOutcome:
    """Records, tables, plot rows, verdicts and diagnostics of one suite run."""

    records: List[Dict[str, Any]] = field(default_factory=list)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    plot: List[Dict[str, Any]] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def check(
        self,
        name: str,
        value: float,
        tolerance: float,
        passed: Optional[bool] = None,
        detail: str = "",
    ) -> Verdict:
        """Record a verdict; passes when value <= tolerance unless passed is given."""
        ok = bool(value <= tolerance) if passed is None else bool(passed)
        verdict = Verdict(
            name=name, passed=ok, value=value, tolerance=tolerance, detail=detail
        )
        self.verdicts.append(verdict)
        log = logger.info if ok else logger.warning
        status = "PASS" if ok else "FAIL"
        log(f"{status} {name}: {value:.6g} (tolerance {tolerance:.6g})")
        return verdict


@dataclass
class RunManifest:
    """
    Summary of one run.

    Attributes:
        config_hash: sha256 of the canonical config document
        version: mbpre version that produced the run
        suite: Suite name
        seed: Experiment seed
        started: UTC start timestamp
        finished: UTC end timestamp
        verdicts: Per-check verdicts
        diagnostics: Regime report and suite diagnostics
        artifacts: Files written, relative to the output directory
    """

    config_hash: str
    version: str
    suite: str
    seed: int
    started: str
    finished: str = ""
    verdicts: List[Verdict] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "suite": self.suite,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "passed": self.passed,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "diagnostics": self.diagnostics,
            "artifacts": self.artifacts,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _gap(estimate: Estimate, reference: Estimate) -> float:
    """|estimate - reference| in combined standard errors."""
    scale = combined_stderr(estimate, reference)
    diff = abs(estimate.value - reference.value)
    if scale > 0:
        return diff / scale
    return 0.0 if diff == 0 else float("inf")


def _ratio_rows(table: RatioTable, ref_name: str) -> List[Dict[str, Any]]:
    rows = []
    for row in table.rows:
        entry: Dict[str, Any] = {
            "n": row.n,
            "series": row.event,
            "value": row.estimate.value,
            "stderr": row.estimate.stderr,
        }
        if row.reference is not None:
            entry[ref_name] = row.reference
        rows.append(entry)
    return rows


def _stabilization(
    outcome: SuiteOutcome, table: RatioTable, tolerance: float, prefix: str
) -> None:
    for event in table.events():
        status = table.stabilization(event, tolerance)
        outcome.check(
            f"{prefix} stabilization {event}",
            table.relative_drift(event),
            tolerance,
            passed=status == "stable",
            detail=status,
        )


def _suite_selftest(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    """Closed forms against exact series coefficients on random environments."""
    model = config.model
    budgets = config.budgets
    tol = config.tolerances
    rng = stream(config.seed, "selftest")
    v = model.v_array
    support = enumerate_support(model.K, budgets.selftest_degree)
    outcome = SuiteOutcome()
    worst_vector = worst_identity = worst_eigen = 0.0

    for fixture in range(budgets.selftest_fixtures):
        batch = sample_letters(model, rng, budgets.selftest_n)
        laws = [batch.law(k) for k in range(budgets.selftest_n)]
        for n in range(1, budgets.selftest_n + 1):
            state = compose(laws[:n], v)
            exact = composed_series(laws[:n], budgets.selftest_degree)
            vector_err = identity_err = 0.0
            for i in range(model.K):
                closed = {z: float(local_prob_vector(state, i, z)) for z in support}
                for z, value in closed.items():
                    gap = abs(value - float(exact[i].coefficient(z)))
                    vector_err = max(vector_err, gap)
                for m in range(1, budgets.selftest_degree + 1):
                    level = sum(p for z, p in closed.items() if sum(z) == m)
                    total = float(local_prob_total(state, i, m))
                    identity_err = max(identity_err, abs(level - total))
            eigen_err = left_eigen_residual(state)
            worst_vector = max(worst_vector, vector_err)
            worst_identity = max(worst_identity, identity_err)
            worst_eigen = max(worst_eigen, eigen_err)
            outcome.records.append(
                {
                    "estimator": "quenched_selftest",
                    "fixture": fixture,
                    "n": n,
                    "max_vector_error": vector_err,
                    "max_identity_error": identity_err,
                    "left_eigen_residual": eigen_err,
                }
            )
    outcome.tables["selftest"] = outcome.records
    outcome.plot = [
        {
            "n": r["n"],
            "series": f"fixture {r['fixture']}",
            "value": r["max_vector_error"],
            "stderr": 0.0,
        }
        for r in outcome.records
    ]
    outcome.check("closed form vs exact series", worst_vector, tol.oracle)
    outcome.check("vector masses sum to total masses", worst_identity, tol.identity)
    outcome.diagnostics["left_eigen_residual"] = worst_eigen
    return outcome


def _suite_strong_ratio(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    model, b, p, tol = config.model, config.budgets, config.params, config.tolerances
    constants = estimate_strong_constants(
        model, p.z_max, b.replicas, b.horizons, config.seed, pool, tol.tail_bound
    )
    table = verify_strong_ratio(
        model, p.i, p.events, b.n_grid, b.replicas, config.seed, pool, constants
    )
    outcome = SuiteOutcome(diagnostics=dict(constants.diagnostics))
    outcome.records.extend(
        {"estimator": "strong_constants", **r} for r in constants.to_records()
    )
    outcome.records.extend(
        {"estimator": "strong_ratio", **row.to_dict()} for row in table.rows
    )
    outcome.plot = _ratio_rows(table, "theta_ref")
    outcome.tables["strong_ratio"] = outcome.plot

    _stabilization(outcome, table, tol.strong_drift, "strong ratio")
    for event in p.events:
        if isinstance(event, int):
            reference = constants.theta[p.i]
        elif (p.i, event) in constants.Theta:
            reference = constants.Theta[(p.i, event)]
        else:
            continue
        last = table.last(event_label(event))
        outcome.check(
            f"strong ratio {last.event} vs limit constant",
            _gap(last.estimate, reference),
            tol.sigmas,
        )
    identity = max(constants.theta_level_gap(p.i, m) for m in range(1, p.z_max + 1))
    outcome.check(
        "sum of Theta over a level equals theta",
        identity,
        tol.identity * max(1.0, constants.theta[p.i].value),
    )
    outcome.check(
        "theta forms agree",
        _gap(constants.theta[p.i], constants.theta_alt[p.i]),
        tol.sigmas,
    )
    return outcome


def _suite_strong_p(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    model, b, p, tol = config.model, config.budgets, config.params, config.tolerances
    constants = estimate_strong_constants(
        model, p.z_max, b.replicas, b.horizons, config.seed, pool, tol.tail_bound
    )
    outcome = SuiteOutcome(diagnostics=dict(constants.diagnostics))
    outcome.records.extend(
        {"estimator": "strong_constants", **r} for r in constants.to_records()
    )

    finals = []
    for choice in p.split_choices():
        laws = verify_p(
            model, choice.i, choice.l, choice.t, b.n_grid, p.z_max, b.replicas,
            config.seed, pool, constants,
        )
        for law in laws:
            rows = law.rows()
            outcome.records.extend({"estimator": "strong_p", **row} for row in rows)
            outcome.plot.extend(
                {
                    "n": law.n,
                    "series": f"i={law.i} l={law.l} t={law.t} z={z}",
                    "value": est.value,
                    "stderr": est.stderr,
                    "p_ref": constants.p_dist[z].value,
                }
                for z, est in law.table.items()
            )
        final = laws[-1]
        finals.append(final)
        worst = max(_gap(est, constants.p_dist[z]) for z, est in final.table.items())
        outcome.check(
            f"p table (i={choice.i}, l={choice.l}, t={choice.t}) vs p",
            worst,
            tol.sigmas,
        )
    for first, other in itertools.combinations(finals, 2):
        worst = max(_gap(first.table[z], other.table[z]) for z in first.table)
        outcome.check(
            f"p tables agree: (i={first.i}, l={first.l}, t={first.t}) vs "
            f"(i={other.i}, l={other.l}, t={other.t})",
            worst,
            tol.sigmas,
        )
    mass = constants.p_enumerated() + constants.p_tail.value
    outcome.check("p enumerated mass plus tail", abs(mass - 1.0), tol.mass)
    outcome.tables["strong_p"] = outcome.plot
    return outcome


def _suite_uniform(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    model, b, p, tol = config.model, config.budgets, config.params, config.tolerances
    table = verify_uniform(model, p.i, p.c, b.n_grid, b.replicas, config.seed, pool)
    outcome = SuiteOutcome(diagnostics={"regime": table.regime.value})
    outcome.records.extend(
        {"estimator": "uniform", "c": p.c, **row.to_dict()} for row in table.rows
    )
    outcome.plot = [
        {
            "n": row.n,
            "series": row.event,
            "value": row.estimate.value,
            "stderr": row.estimate.stderr,
            "uniform_ref": 1.0 / p.c,
        }
        for row in table.rows
    ]
    outcome.tables["uniform"] = outcome.plot
    strong = table.regime is Regime.STRONGLY_SUPERCRITICAL
    bound = tol.uniform_strong if strong else tol.uniform_interm
    outcome.check(f"uniform law on 1..{p.c}", table.max_deviation(), bound)
    return outcome


def _renewal_table(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> RenewalTable:
    rb = config.budgets.renewal
    cache = RenewalCache(out_dir / "cache")
    return cache.get_or_compute(
        config.model, rb.grid, rb.k_max, rb.replicas, config.seed, pool
    )


def _suite_interm_ratio(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    model, b, p, tol = config.model, config.budgets, config.params, config.tolerances
    renewal = _renewal_table(config, pool, out_dir)
    constants = estimate_interm_delta(
        model,
        p.i,
        b.replicas,
        renewal,
        b.horizons,
        p.z_max,
        config.seed,
        pool,
        tol.tail_bound,
    )
    table = verify_interm_ratio(
        model, p.i, p.events, b.n_grid, b.replicas, config.seed, pool, constants
    )
    outcome = SuiteOutcome(diagnostics=dict(constants.diagnostics))
    outcome.records.extend(
        {"estimator": "interm_delta", **r} for r in constants.to_records()
    )
    outcome.records.extend(
        {"estimator": "interm_ratio", **row.to_dict()} for row in table.rows
    )
    outcome.plot = _ratio_rows(table, "delta_ref")
    outcome.tables["interm_ratio"] = outcome.plot

    _stabilization(outcome, table, tol.interm_drift, "intermediate ratio")
    v = model.v_array
    for event in p.events:
        last = table.last(event_label(event))
        outcome.check(
            f"intermediate ratio {last.event} is positive",
            last.estimate.value,
            0.0,
            passed=last.estimate.value > 0,
        )
        if isinstance(event, int):
            total = float(v.sum())
            reference = Estimate(
                constants.delta_hat.value / total, constants.delta_hat.stderr / total
            )
        else:
            reference = constants.delta[event] if event in constants.delta else None
        if reference is not None:
            outcome.check(
                f"intermediate ratio {last.event} vs Delta",
                _gap(last.estimate, reference),
                tol.sigmas,
            )
    for l, est in constants.delta_unit.items():
        outcome.diagnostics[f"delta_as_written_ratio_{l}"] = (
            constants.delta_unit_alt[l].value / est.value if est.value else float("nan")
        )
    return outcome


def _suite_interm_q(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    model, b, p, tol = config.model, config.budgets, config.params, config.tolerances
    renewal = _renewal_table(config, pool, out_dir)
    n = max(b.n_grid)
    q = estimate_q(model, p.z_max, n, b.replicas, renewal, config.seed, pool)
    outcome = SuiteOutcome(
        diagnostics={"plus_mass": q.plus_mass.value, "q_total": q.q_total.value}
    )
    outcome.records.extend({"estimator": "interm_q", **r} for r in q.to_records())

    negative = min(est.value for est in q.q_dist.values())
    outcome.check("q is nonnegative", negative, 0.0, passed=negative >= 0)
    spread = tol.sigmas * combined_stderr(*q.q_dist.values())
    outcome.check("q enumerated mass at most 1", q.q_enumerated(), 1.0 + spread)

    for choice in p.split_choices():
        laws = conditional_law_at_minimum(
            model, choice.i, choice.l, choice.t, b.n_grid, p.z_max, b.replicas,
            config.seed, pool, reference=q,
        )
        for law in laws:
            outcome.records.extend(
                {"estimator": "interm_conditional", **row} for row in law.rows()
            )
            outcome.plot.extend(
                {
                    "n": law.n,
                    "series": f"i={law.i} l={law.l} t={law.t} z={z}",
                    "value": est.value,
                    "stderr": est.stderr,
                    "q_ref": q.q_dist[z].value,
                }
                for z, est in law.table.items()
            )
        final = laws[-1]
        worst = max(_gap(est, q.q_dist[z]) for z, est in final.table.items())
        outcome.check(
            f"law at the minimum (i={choice.i}, l={choice.l}, t={choice.t}) vs q",
            worst,
            tol.sigmas,
        )

    start = unit(model.K, p.i)
    by_k = k_independence(model, start, n, b.replicas, config.seed, pool)
    outcome.records.extend(
        {
            "estimator": "k_independence",
            "k": k,
            "z": list(start),
            "n": n,
            **est.to_dict(),
        }
        for k, est in by_k.items()
    )
    outcome.check(
        "conditional size law does not depend on k",
        _gap(by_k[1], by_k[2]),
        tol.sigmas,
    )
    outcome.tables["interm_q"] = outcome.plot
    return outcome


def _suite_renewal(
    config: ExperimentConfig, pool: ReplicaPool, out_dir: Path
) -> SuiteOutcome:
    rb, tol = config.budgets.renewal, config.tolerances
    table = renewal_function(
        config.model, rb.grid, rb.k_max, rb.replicas, config.seed, pool
    )
    points = table.grid[: rb.check_points]
    check = harmonicity_residual(
        table, config.model, points, rb.replicas, stream(config.seed, "harmonicity")
    )
    outcome = SuiteOutcome(diagnostics={"tail": table.tail, "key": table.key})
    for x, value, err in zip(table.grid, table.values, table.stderr):
        outcome.records.append(
            {
                "estimator": "renewal",
                "x": float(x),
                "value": float(value),
                "stderr": float(err),
            }
        )
    for x, expected, residual in zip(check.points, check.expected, check.residual):
        outcome.records.append(
            {
                "estimator": "harmonicity",
                "x": float(x),
                "expected": float(expected),
                "residual": float(residual),
            }
        )
    outcome.plot = [
        {"n": float(x), "series": "V", "value": float(value), "stderr": float(err)}
        for x, value, err in zip(table.grid, table.values, table.stderr)
    ]
    outcome.tables["renewal"] = outcome.plot
    outcome.check("V(0) = 1", abs(float(table(0.0)) - 1.0), tol.renewal_origin)
    steps = np.diff(table.values)
    outcome.check("V is monotone", float(-steps.min()) if steps.size else 0.0, 0.0,
                  passed=bool(np.all(steps >= 0)))
    outcome.check("harmonicity residual", check.max_residual, tol.harmonic)
    return outcome


SUITES: Dict[Suite, Callable[[ExperimentConfig, ReplicaPool, Path], SuiteOutcome]] = {
    Suite.QUENCHED_SELFTEST: _suite_selftest,
    Suite.STRONG_RATIO: _suite_strong_ratio,
    Suite.STRONG_P: _suite_strong_p,
    Suite.UNIFORM: _suite_uniform,
    Suite.INTERM_RATIO: _suite_interm_ratio,
    Suite.INTERM_Q: _suite_interm_q,
    Suite.RENEWAL: _suite_renewal,
}


# Checked before a suite spends any budget
SUITE_REGIMES: Dict[Suite, Regime] = {
    Suite.STRONG_RATIO: Regime.STRONGLY_SUPERCRITICAL,
    Suite.STRONG_P: Regime.STRONGLY_SUPERCRITICAL,
    Suite.INTERM_RATIO: Regime.INTERMEDIATELY_SUPERCRITICAL,
    Suite.INTERM_Q: Regime.INTERMEDIATELY_SUPERCRITICAL,
}


def _stamp(config: ExperimentConfig, record: Mapping[str, Any]) -> Dict[str, Any]:
    return {
        **record,
        "fixture_hash": config.model.model_hash(),
        "config_hash": config.config_hash,
        "seed": config.seed,
        "horizons": config.budgets.horizons.to_dict(),
    }


def write_records_csv(
    path: PathLike, records: Sequence[Mapping[str, Any]], lead: Sequence[str] = ()
) -> Path:
    """CSV with the lead columns first and every other key after them, sorted."""
    extra = sorted({key for r in records for key in r} - set(lead))
    header = list(lead) + extra
    rows = ([_cell(r.get(key, "")) for key in header] for r in records)
    return write_csv(path, header, rows)


def _cell(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return " ".join(str(x) for x in value)
    return value


def emit_plotdata(results: Sequence[Mapping[str, Any]], path: PathLike) -> Path:
    """
    Long-format plot data: n, series, value, stderr and any reference columns.

    Empty results give a header-only file.
    """
    return write_records_csv(path, results, lead=PLOT_COLUMNS)


def run(
    config: ExperimentConfig,
    out_dir: Optional[PathLike] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
) -> RunManifest:
    """
    Run the configured suite and write its artifacts.

    Args:
        config: Validated experiment
        out_dir: Output directory; config.output.dir when None
        threads: Worker processes; falls back to MBPRE_THREADS, then 1
        seed: Seed override

    Returns:
        The manifest, also written to out_dir/manifest.json

    Raises:
        RegimeMismatchError: If the suite does not apply to the model's regime
        ConfigError: If the config is inconsistent
        ArtifactIOError: If an artifact cannot be written
    """
    from . import __version__

    if seed is not None:
        config = config.with_seed(seed)
    out = Path(out_dir if out_dir is not None else config.output.dir)
    pool = ReplicaPool(threads=threads, shard_size=config.budgets.shard_size)
    manifest = RunManifest(
        config_hash=config.config_hash,
        version=__version__,
        suite=config.suite.value,
        seed=config.seed,
        started=_now(),
    )
    logger.info(f"Running suite {config.suite.value} (seed {config.seed}) into {out}")

    try:
        if config.suite in SUITE_REGIMES:
            require_regime(config.model, SUITE_REGIMES[config.suite])
        report = classify(config.model, rng=stream(config.seed, "classify"))
        outcome = SUITES[config.suite](config, pool, out)
    except MbpreError as e:
        logger.error(f"Suite {config.suite.value} failed: {e}")
        raise

    records = [_stamp(config, r) for r in outcome.records]
    formats = config.output.formats
    if "jsonl" in formats:
        write_jsonl(out / "results.jsonl", records)
        manifest.artifacts.append("results.jsonl")
    if "csv" in formats:
        for name, rows in outcome.tables.items():
            write_records_csv(out / f"{name}.csv", rows)
            manifest.artifacts.append(f"{name}.csv")
        emit_plotdata(outcome.plot, out / "plotdata.csv")
        manifest.artifacts.append("plotdata.csv")

    manifest.verdicts = outcome.verdicts
    manifest.diagnostics = {"regime": report.to_dict(), **outcome.diagnostics}
    manifest.finished = _now()
    write_json_atomic(out / "manifest.json", manifest.to_dict())
    logger.info(
        f"Suite {config.suite.value}: "
        f"{sum(v.passed for v in manifest.verdicts)}/{len(manifest.verdicts)} "
        "checks passed"
    )
    return manifest
