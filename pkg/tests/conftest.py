import numpy as np
import pytest

from rampmerge.numerics import Xoshiro256pp


@pytest.fixture
def rng():
    return Xoshiro256pp(20240601)


def random_array(rng: Xoshiro256pp, *shape, scale: float = 1.0) -> np.ndarray:
    return rng.uniform_array(-scale, scale, shape)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.REPORT, key=lambda l: int(l.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
