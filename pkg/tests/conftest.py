import warnings

import numpy as np
import pytest

from softcbf.cbf_chain import NonClassKWarning
from softcbf.sim import build_scenario, default_config
from softcbf.sim.scenario import sample_states


@pytest.fixture(scope="session")
def ex1_cfg():
    return default_config("example1")


@pytest.fixture(scope="session")
def ex3_cfg():
    return default_config("example3")


@pytest.fixture(scope="session")
def ex1(ex1_cfg):
    return build_scenario(ex1_cfg)


@pytest.fixture(scope="session")
def ex3(ex3_cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonClassKWarning)
        return build_scenario(ex3_cfg)


@pytest.fixture(scope="session")
def ex1_safe_states(ex1):
    return sample_states(ex1, 100, np.random.default_rng(11), require="Ss")


@pytest.fixture(scope="session")
def ex3_safe_states(ex3):
    return sample_states(ex3, 100, np.random.default_rng(13), require="Ss")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])
