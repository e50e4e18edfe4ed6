"""
Pytest fixtures for mbpre tests.
"""

import io
import logging
import math

import numpy as np
import pytest

from mbpre.environment import EnvModel, RhoLaw, ShapeLaw, ShiftLaw
from mbpre.linfrac import LinFracLaw
from mbpre.logging import DEFAULT_LOG_FORMAT, MbpreFormatter
from mbpre.parallel import ReplicaPool


@pytest.fixture
def configuring_logger_for_tests():
    """Return a StringIO object that has been configured as a log handler."""
    log_stream = io.StringIO()
    logger = logging.getLogger("mbpre")

    # Save original handlers to restore later
    original_handlers = logger.handlers.copy()
    original_level = logger.level

    logger.handlers.clear()

    handler = logging.StreamHandler(log_stream)
    handler.setFormatter(MbpreFormatter(DEFAULT_LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)

    yield log_stream

    # Restore original state
    logger.handlers.clear()
    for handler in original_handlers:
        logger.addHandler(handler)
    logger.setLevel(original_level)


@pytest.fixture
def stream_handler():
    """Return a StreamHandler already configured with MbpreFormatter."""
    handler = logging.StreamHandler()
    handler.setFormatter(MbpreFormatter(DEFAULT_LOG_FORMAT))
    return handler


@pytest.fixture
def l0_law():
    """L0 letter: M = [[1, 1], [1, 1]], w = (1, 1): rho = 2 for v = (1, 1)."""
    return LinFracLaw(M=np.ones((2, 2)), w=np.ones(2))


@pytest.fixture
def l0_model():
    """Deterministic environment repeating l0_law."""
    return EnvModel(
        K=2,
        v=(1.0, 1.0),
        alpha=0.3,
        rho_law=RhoLaw("gaussian_logrho", mu=math.log(2.0), sigma=0.0),
        shape_law=ShapeLaw(1.0, 1.0),
        w_law=ShiftLaw("constant", {"value": 1.0}),
        seed=0,
    )


def _gaussian_model(mu: float, sigma: float, seed: int) -> EnvModel:
    return EnvModel(
        K=2,
        v=(1.0, 1.0),
        alpha=0.3,
        rho_law=RhoLaw("gaussian_logrho", mu=mu, sigma=sigma),
        shape_law=ShapeLaw(0.95, 1 / 0.95),
        w_law=ShiftLaw("uniform", {"low": 0.7, "high": 0.75}, relative=True),
        seed=seed,
    )


@pytest.fixture
def strong_model():
    """Gaussian log-rho with tilted drift 0.55 > 0."""
    return _gaussian_model(0.8, 0.5, seed=7)


@pytest.fixture
def interm_model():
    """Gaussian log-rho with mu = sigma^2: zero tilted drift."""
    return _gaussian_model(0.25, 0.5, seed=11)


@pytest.fixture
def small_pool():
    """In-process pool with small shards."""
    return ReplicaPool(threads=1, shard_size=250)


@pytest.fixture
def l0_document():
    """Experiment document running quenched-selftest on the l0_model environment."""
    return {
        "model": {
            "K": 2,
            "v": [1.0, 1.0],
            "alpha": 0.3,
            "rho_law": {"family": "gaussian_logrho", "mu": math.log(2.0), "sigma": 0.0},
            "shape_law": {"lo": 1.0, "hi": 1.0},
            "w_law": {"family": "constant", "params": {"value": 1.0}},
            "seed": 0,
        },
        "suite": "quenched-selftest",
        "seed": 1,
        "budgets": {"selftest_fixtures": 1, "selftest_n": 3, "selftest_degree": 4},
    }
