import numpy as np
import pytest

from oamp.model import ExperimentConfig, build_system


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_config(**overrides):
    base = dict(n=64, m_over_n=0.5, kappa=4.0, lam=0.25, snr_db=30.0,
                iterations=5, trials=2, algorithm="oamp-w",
                b_strategy="integral", threshold_rule="variance", seed=0)
    base.update(overrides)
    return ExperimentConfig(**base)


def make_system(seed=0, **overrides):
    cfg = make_config(**overrides)
    return build_system(cfg, np.random.default_rng(seed)), cfg
