import numpy as np
import pytest

from ftgstab import build_ftg, load_fixture
from ftgstab.lmi import SynthesisMode
from ftgstab.synthesis import feasible_at_rate


@pytest.fixture(scope="session")
def ex1():
    return load_fixture("ex1")


@pytest.fixture(scope="session")
def ex2():
    return load_fixture("ex2")


@pytest.fixture(scope="session")
def scalar():
    return load_fixture("scalar")


def _cert(system, T, mode, gamma):
    res = feasible_at_rate(system, build_ftg(system.M, T), mode, gamma)
    assert res.feasible, res.message
    return res.certificate


@pytest.fixture(scope="session")
def scalar_dep_cert(scalar):
    return _cert(scalar, 0, SynthesisMode.DEP, 0.5)


@pytest.fixture(scope="session")
def ex1_cert(ex1):
    return _cert(ex1, 5, SynthesisMode.IND, 0.9606)


@pytest.fixture(scope="session")
def ex2_cert(ex2):
    return _cert(ex2, 1, SynthesisMode.DEP, 1.34)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
