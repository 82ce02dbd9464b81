import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest


@pytest.fixture(scope="session")
def default_config():
    from mtsc.experiments.config import load_config

    return load_config()


@pytest.fixture(scope="session")
def trained_models(default_config):
    """seed -> (data, {arm: model}) for the default configuration (a few minutes)."""
    from mtsc.experiments.pipeline import make_data, train_arms

    out = {}
    for seed in default_config.sweep.seeds:
        data = make_data(default_config, seed)
        out[seed] = (data, train_arms(default_config, seed, data))
    return out


@pytest.fixture(scope="session")
def default_sweep(default_config, trained_models):
    from mtsc.experiments.sweep import evaluate_seed, run_id_for

    run_id = run_id_for(default_config)
    records = []
    for seed, (data, models) in trained_models.items():
        records.extend(evaluate_seed(default_config, seed, models, data, run_id))
    return records


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs the five-seed trained models")


def pytest_collection_modifyitems(items):
    for item in items:
        if {"trained_models", "default_sweep"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)
