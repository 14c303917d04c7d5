import numpy as np
import pytest

from stylecast.config import ExperimentConfig
from stylecast.corpus.generator import build_corpus


@pytest.fixture(scope="session")
def base_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def small_corpus(base_cfg):
    """64 pairs with the default settings; shared across tests."""
    corpus = build_corpus(base_cfg.corpus, master_seed=424242, n_pairs=64)
    corpus.compute_stats()
    return corpus


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
