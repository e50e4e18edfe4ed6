"""
Tests for the command-line entry point.
"""

import json
import logging

import pytest

from mbpre.cli import EXIT_CONFIG, EXIT_OK, EXIT_REGIME, build_parser, main


@pytest.fixture(autouse=True)
def restore_logger():
    """main() attaches a console handler; detach it after each test."""
    logger = logging.getLogger("mbpre")
    handlers, level = logger.handlers.copy(), logger.level
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)


@pytest.fixture
def write_document(tmp_path):
    def _write(document, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)

    return _write


def test_validate_config(write_document, l0_document, capsys):
    path = write_document(l0_document)
    assert main(["validate-config", path]) == EXIT_OK
    assert "valid quenched-selftest config" in capsys.readouterr().out


def test_validate_config_missing_seed(write_document, l0_document):
    document = dict(l0_document)
    del document["seed"]
    assert main(["validate-config", write_document(document)]) == EXIT_CONFIG


def test_validate_config_missing_file(tmp_path):
    assert main(["validate-config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_run_selftest(write_document, l0_document, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", write_document(l0_document), "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "manifest.json").exists()
    assert "2/2 passed" in capsys.readouterr().out


def test_run_seed_override(write_document, l0_document, tmp_path):
    out = tmp_path / "out"
    config = write_document(l0_document)
    args = ["run", "--config", config, "--out", str(out), "--seed", "3"]
    assert main(args) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 3


def test_run_regime_mismatch(write_document, l0_document, tmp_path):
    document = dict(l0_document, suite="interm-q")
    args = ["run", "--config", write_document(document), "--out", str(tmp_path / "out")]
    assert main(args) == EXIT_REGIME


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_parser_log_level():
    argv = ["--log-level", "DEBUG", "validate-config", "x.json"]
    args = build_parser().parse_args(argv)
    assert args.log_level == "DEBUG"
    assert args.path == "x.json"
