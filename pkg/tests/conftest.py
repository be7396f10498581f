import sys

import numpy as np
import pytest

from maskmatch import bfv
from maskmatch.ring import RingParams


@pytest.fixture(scope="session")
def small_params():
    """Default-width modulus on a smaller ring, for fast bulk tests."""
    return RingParams.build(1024, 109, 20)


@pytest.fixture(scope="session")
def default_params():
    return RingParams.default()


@pytest.fixture(scope="session")
def desk_params():
    return RingParams.desk()


@pytest.fixture(scope="session")
def small_keys(small_params):
    rng = np.random.default_rng(1234)
    pk, sk = bfv.keygen(small_params, rng=rng)
    rk = bfv.relin_keygen(sk, rng=rng)
    return pk, sk, rk


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
