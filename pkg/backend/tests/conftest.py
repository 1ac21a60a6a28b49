"""Shared fixtures: a small synthetic DoS capture and a trained tiny classifier."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from canids.core.model import Model, build_model, make_meta
from canids.core.quant import QuantizedModel, calibrate, fold_batchnorm, quantize_model
from canids.core.trace_io import AttackKind, Trace, generate_trace, split_trace
from canids.core.training import train
from canids.core.windowing import window_tensors
from canids.models.schemas import TrainingHyperparams
from canids.utils.config import Settings, load_settings


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow", default=False):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def settings() -> Settings:
    return load_settings(overrides={"duration": 1.0, "seed": 7})


@pytest.fixture(scope="session")
def dos_trace(settings: Settings) -> Trace:
    """About one second of traffic with a continuous 0x000 flood."""

    return generate_trace(settings.generator_config(AttackKind.DOS))


@pytest.fixture(scope="session")
def dos_splits(dos_trace: Trace):
    return split_trace(dos_trace)


@pytest.fixture(scope="session")
def dos_windows(dos_splits):
    train_trace, val_trace, test_trace = dos_splits
    return tuple(window_tensors(t, 4, 16) for t in (train_trace, val_trace, test_trace))


@pytest.fixture(scope="session")
def trained_tiny(dos_windows) -> Model:
    """Tiny profile trained briefly on the DoS fixture; shared, do not mutate."""

    train_set, val_set, _ = dos_windows
    meta = make_meta(
        profile="tiny",
        n=4,
        width=16,
        attack=AttackKind.DOS,
        seed=3,
        hyperparams=TrainingHyperparams(learning_rate=2e-3, epochs=5, batch_size=64),
    )
    return train(build_model(meta), train_set, val_set).model


@pytest.fixture(scope="session")
def folded_tiny(trained_tiny: Model) -> Model:
    return fold_batchnorm(trained_tiny)


@pytest.fixture(scope="session")
def quantized_tiny(folded_tiny: Model, dos_windows) -> QuantizedModel:
    train_set, _, _ = dos_windows
    return quantize_model(folded_tiny, calibrate(folded_tiny, train_set[0]))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
