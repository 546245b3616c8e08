from __future__ import annotations

import numpy as np
import pytest

from lobworld.config import config_from_dict
from lobworld.pipeline import Pipeline
from lobworld.synthetic import GeneratorParams, generate_synthetic_day

TINY = {
    "seed": 3,
    "data": {"n_ticks": 1600, "train": ["ascending", "descending"],
             "validation": ["oscillating"], "test": ["ascending"]},
    "autoencoder": {"channels": [8, 8, 8], "train": {"epochs": 3, "batch_size": 64}},
    "transition": {"rnn_units": 16, "K": 3, "offsets": [0, 20],
                   "train": {"epochs": 2, "batch_size": 64}},
    "reward": {"reward_lstm": 8, "reward_dense": 8, "train": {"epochs": 2}},
    "agent": {"kinds": ["pg"], "H": 15, "hidden": [16, 16], "iterations": 3,
              "episodes_per_iteration": 4},
    "benchmark": {"classifier": {"epochs": 1}},
    "evaluation": {"compare_days": 1, "compare_horizon": 10, "compare_samples": 2},
}


def tiny_config(**overrides):
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in TINY.items()}
    for k, v in overrides.items():
        raw[k] = {**raw.get(k, {}), **v} if isinstance(v, dict) else v
    return config_from_dict(raw)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A complete tiny pipeline run shared by the world, evaluation and CLI tests."""
    out = tmp_path_factory.mktemp("tiny_run")
    pipe = Pipeline(tiny_config(), out)
    pipe.run()
    return pipe


@pytest.fixture(scope="session")
def tiny_world(tiny_run):
    return tiny_run.world()


@pytest.fixture(scope="session")
def asc_day():
    return generate_synthetic_day(11, 1200, "ascending", name="asc", split="test")


@pytest.fixture(scope="session")
def flat_day():
    return generate_synthetic_day(12, 1200, "ascending",
                                  GeneratorParams(drift=0.0, noise=0.0), name="flat",
                                  split="test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "CRITERION n: PASS|FAIL" line per acceptance check, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
