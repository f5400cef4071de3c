import numpy as np
import pytest

from astraea.diffusion import ModelConfig, build_toy_model
from astraea.numerics import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def small_cfg():
    return ModelConfig(n_tokens=16, channels=8, context_tokens=4, n_blocks=2, timesteps=8)


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return build_toy_model(small_cfg)


@pytest.fixture(scope="session")
def default_model():
    return build_toy_model(ModelConfig())


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
