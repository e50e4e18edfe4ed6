"""
Tests for experiment documents.
"""

import copy
import json

import pytest

from mbpre.config import (
    Budgets,
    ExperimentConfig,
    Params,
    RenewalBudget,
    Suite,
    Tolerances,
    load_config,
    validate_document,
)
from mbpre.exceptions import ArtifactIOError, ConfigError


def test_from_dict_defaults(l0_document):
    config = ExperimentConfig.from_dict(l0_document)
    assert config.suite is Suite.QUENCHED_SELFTEST
    assert config.seed == 1
    assert config.model.K == 2
    assert config.budgets.selftest_degree == 4
    assert config.budgets.replicas == Budgets().replicas
    assert config.params == Params()
    assert config.tolerances.oracle == 1e-9
    assert config.output.formats == ("csv", "jsonl")


def test_from_dict_nested_sections(l0_document):
    doc = dict(
        l0_document,
        suite="strong-p",
        budgets={
            "replicas": 500,
            "n_grid": [10, 20],
            "horizons": {"k_max": 30},
            "renewal": {"grid": [0, 1, 2], "k_max": 50},
        },
        params={"events": [1, [1, 0]], "choices": [{"i": 0, "l": 1, "t": 0.3}]},
        tolerances={"sigmas": 4.0},
    )
    config = ExperimentConfig.from_dict(doc)
    assert config.budgets.n_grid == (10, 20)
    assert config.budgets.horizons.k_max == 30
    assert config.budgets.renewal.grid == (0.0, 1.0, 2.0)
    assert config.params.events == (1, (1, 0))
    assert config.params.split_choices()[0].l == 1
    assert config.tolerances.sigmas == 4.0


def test_split_choices_fallback():
    params = Params(i=1, l=0, t=0.25)
    [choice] = params.split_choices()
    assert (choice.i, choice.l, choice.t) == (1, 0, 0.25)


@pytest.mark.parametrize(
    "patch",
    [
        {"suite": "no-such-suite"},
        {"params": {"t": 1.5}},
        {"params": {"i": 2}},
        {"params": {"events": [[1, 0, 0]]}},
        {"params": {"choices": [{"i": 0, "l": 5, "t": 0.5}]}},
        {"budgets": {"replicas": 1}},
        {"budgets": {"renewal": {"grid": [0.5, 1.0]}}},
        {"tolerances": {"sigmas": -1.0}},
        {"output": {"formats": ["parquet"]}},
    ],
)
def test_invalid_documents(l0_document, patch):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(l0_document, **patch))


@pytest.mark.parametrize("key", ["model", "suite", "seed"])
def test_required_keys(l0_document, key):
    doc = copy.deepcopy(l0_document)
    del doc[key]
    with pytest.raises(ConfigError):
        validate_document(doc)


def test_not_an_object():
    with pytest.raises(ConfigError):
        validate_document([1, 2])


def test_model_errors_become_config_errors(l0_document):
    doc = copy.deepcopy(l0_document)
    doc["model"]["v"] = [1.0, 1.0, 1.0]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_fixed_shift_with_random_rho_rejected_on_load(l0_document):
    """A constant shift cannot keep up with an unbounded Perron root."""
    doc = copy.deepcopy(l0_document)
    doc["model"]["rho_law"]["sigma"] = 0.5
    with pytest.raises(ConfigError, match="properness"):
        ExperimentConfig.from_dict(doc)

    doc["model"]["w_law"]["relative"] = True
    assert ExperimentConfig.from_dict(doc).model.w_law.relative


def test_renewal_budget_validation():
    with pytest.raises(ConfigError):
        RenewalBudget(grid=(0.0, 1.0, 1.0))
    with pytest.raises(ConfigError):
        RenewalBudget(k_max=0)


def test_tolerance_validation():
    with pytest.raises(ConfigError):
        Tolerances(oracle=0.0)


def test_config_hash(l0_document):
    a = ExperimentConfig.from_dict(l0_document)
    reordered = json.loads(json.dumps(l0_document, sort_keys=True))
    b = ExperimentConfig.from_dict(reordered)
    assert a.config_hash == b.config_hash
    assert len(a.config_hash) == 64


def test_with_seed(l0_document):
    config = ExperimentConfig.from_dict(l0_document)
    other = config.with_seed(9)
    assert other.seed == 9
    assert other.document["seed"] == 9
    assert other.config_hash != config.config_hash
    assert config.seed == 1


def test_load_config(tmp_path, l0_document):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(l0_document), encoding="utf-8")
    config = load_config(path)
    assert config == ExperimentConfig.from_dict(l0_document)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_config(tmp_path / "absent.json")
    assert isinstance(excinfo.value.original_exception, ArtifactIOError)


def test_load_config_not_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_single_choice_warning(l0_document, caplog):
    ExperimentConfig.from_dict(dict(l0_document, suite="strong-p"))
    assert "skips the agreement check" in caplog.text
