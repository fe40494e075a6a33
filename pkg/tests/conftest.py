import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = TESTS / "fixtures" / "golden"


@pytest.fixture
def golden_dir():
    return GOLDEN


@pytest.fixture
def minimal_dex_bytes():
    return (GOLDEN / "minimal.dex").read_bytes()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x (6 train, 3 val, 3 test) grayscale 32x32 images."""
    from malimg.harness import make_corpus

    root = tmp_path_factory.mktemp("tiny")
    make_corpus(root, n_train=6, n_val=3, n_test=3, size=32, channels=1,
                classes=("noise", "bands", "columns"), seed=3)
    return root


@pytest.fixture(scope="session")
def tiny_corpus_rgb(tmp_path_factory):
    from malimg.harness import make_corpus

    root = tmp_path_factory.mktemp("tiny_rgb")
    make_corpus(root, n_train=6, n_val=3, n_test=3, size=32, channels=3,
                classes=("noise", "bands", "columns"), seed=4)
    return root
