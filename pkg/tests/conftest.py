import numpy as np
import pytest

from fedsim.params import ParamVector
from fedsim.updates import ClientUpdate, RoundState


def vec(values, name="w"):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    return ParamVector(values, ((name, (values.size,)),))


def make_updates(rows, counts=None, ids=None):
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    counts = [10] * n if counts is None else counts
    ids = list(range(n)) if ids is None else ids
    return [ClientUpdate(int(i), int(c), vec(r)) for i, c, r in zip(ids, counts, rows)]


def state_for(global_values, round_index=0, seed=0):
    return RoundState(round_index, vec(global_values), seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
