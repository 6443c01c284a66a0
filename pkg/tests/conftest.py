import numpy as np
import pytest

from mvcnn.embeddings import random_table
from mvcnn.network import MVCNN, NetworkConfig
from mvcnn.text import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_vocab():
    return Vocabulary.build([[f"w{i}" for i in range(20)]])


def make_model(vocab, rng, c=2, d=4, layers=2, sizes=(3, 5), kernels=2, classes=3,
               init_range=0.5, **kw):
    cfg = NetworkConfig(c=c, d=d, num_layers=layers, filter_sizes=sizes,
                        kernels_per_size=kernels, num_classes=classes, **kw)
    table = random_table(vocab, c, d, rng, init_range=init_range)
    return MVCNN(cfg, table, rng)


@pytest.fixture
def model_factory(small_vocab, rng):
    def factory(**kw):
        return make_model(small_vocab, rng, **kw)
    return factory


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
