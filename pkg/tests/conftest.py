import pytest

from cnmpc.mintime import MinTimeConstants, problem_spec
from cnmpc.simcli import PRESETS, SimConfig, run_simulation


@pytest.fixture(scope="session")
def consts():
    return MinTimeConstants()


@pytest.fixture(scope="session")
def spec10(consts):
    return problem_spec(consts, 10)


@pytest.fixture(scope="session")
def preset_results():
    """One closed-loop run per canonical case, shared across the suite."""
    return {
        case: run_simulation(SimConfig(case_preset=case, **PRESETS[case]))
        for case in sorted(PRESETS)
    }
