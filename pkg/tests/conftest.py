import numpy as np
import pytest

from past.data import SyntheticSpec, gen_synthetic, six_split
from past.nn import ModelSpec


@pytest.fixture
def small_spec():
    return ModelSpec(5, (7, 6), 3, "tanh")


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(3)
    return rng.standard_normal((9, 5)), rng.integers(0, 3, size=9)


@pytest.fixture
def tiny_split():
    data = gen_synthetic(SyntheticSpec(num_classes=3, dim=4, per_class_count=40, cluster_spread=0.5), seed=11)
    return six_split(data, seed=5)


@pytest.fixture
def tiny_spec():
    return ModelSpec(4, (8,), 3, "relu")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: int(k[2:])):
        terminalreporter.write_line(mod.RESULTS[key])
