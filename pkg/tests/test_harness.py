"""
Tests for the suite runner.
"""

import json

import pytest

from mbpre import __version__
from mbpre.config import ExperimentConfig
from mbpre.exceptions import RegimeMismatchError
from mbpre.harness import (
    PLOT_COLUMNS,
    SuiteOutcome,
    emit_plotdata,
    run,
    write_records_csv,
)
from mbpre.utils import read_csv


@pytest.fixture
def l0_config(l0_document):
    return ExperimentConfig.from_dict(l0_document)


def test_selftest_run(l0_config, tmp_path):
    manifest = run(l0_config, out_dir=tmp_path)
    assert manifest.passed
    assert manifest.exit_code == 0
    assert manifest.version == __version__
    assert manifest.suite == "quenched-selftest"
    assert set(manifest.artifacts) == {"results.jsonl", "selftest.csv", "plotdata.csv"}

    written = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert written["passed"] is True
    assert written["config_hash"] == l0_config.config_hash
    assert written["diagnostics"]["regime"]["regime"] == "strongly_supercritical"
    assert [v["name"] for v in written["verdicts"]] == [
        "closed form vs exact series",
        "vector masses sum to total masses",
    ]


def test_selftest_records(l0_config, tmp_path):
    run(l0_config, out_dir=tmp_path)
    lines = (tmp_path / "results.jsonl").read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["n"] for r in records] == [1, 2, 3]
    for record in records:
        assert record["seed"] == 1
        assert record["config_hash"] == l0_config.config_hash
        assert record["max_vector_error"] <= 1e-9


def test_results_are_reproducible(l0_config, tmp_path):
    run(l0_config, out_dir=tmp_path / "a")
    run(l0_config, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "results.jsonl").read_bytes()
    b = (tmp_path / "b" / "results.jsonl").read_bytes()
    assert a == b


def test_seed_override(l0_config, tmp_path):
    manifest = run(l0_config, out_dir=tmp_path, seed=5)
    assert manifest.seed == 5
    assert manifest.config_hash != l0_config.config_hash


def test_jsonl_only(l0_document, tmp_path):
    document = dict(l0_document, output={"formats": ["jsonl"]})
    config = ExperimentConfig.from_dict(document)
    manifest = run(config, out_dir=tmp_path)
    assert manifest.artifacts == ["results.jsonl"]
    assert not (tmp_path / "plotdata.csv").exists()


def test_regime_mismatch(l0_document, tmp_path):
    config = ExperimentConfig.from_dict(dict(l0_document, suite="interm-ratio"))
    with pytest.raises(RegimeMismatchError):
        run(config, out_dir=tmp_path)
    assert not (tmp_path / "manifest.json").exists()


def test_emit_plotdata_empty(tmp_path):
    path = emit_plotdata([], tmp_path / "plotdata.csv")
    assert path.read_text(encoding="utf-8") == "n,series,value,stderr\n"


def test_emit_plotdata_reference_columns(tmp_path):
    rows = [
        {"n": 10, "series": "|Z|=1", "value": 0.5, "stderr": 0.01, "theta_ref": 0.25},
        {"n": 20, "series": "|Z|=1", "value": 0.4, "stderr": 0.02},
    ]
    path = emit_plotdata(rows, tmp_path / "plotdata.csv")
    read = read_csv(path)
    assert list(read[0]) == list(PLOT_COLUMNS) + ["theta_ref"]
    assert read[1]["theta_ref"] == ""


def test_records_csv_joins_lists(tmp_path):
    records = [{"z": [1, 0], "value": 0.5}]
    path = write_records_csv(tmp_path / "t.csv", records, lead=("z",))
    assert read_csv(path) == [{"z": "1 0", "value": "0.5"}]


def test_outcome_check():
    outcome = SuiteOutcome()
    assert outcome.check("small", 0.1, 0.2).passed
    assert not outcome.check("large", 0.3, 0.2).passed
    forced = outcome.check("forced", 0.0, 1.0, passed=False, detail="insufficient grid")
    assert not forced.passed
    assert [v.to_dict()["passed"] for v in outcome.verdicts] == [True, False, False]
