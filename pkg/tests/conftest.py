import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tri_bank():
    """(1,0), (0.6,0.8), (0,1): cosine distances 0.4, 1.0 and 0.2 between pairs."""
    from cfb_filter import FeatureBankSet

    bs = FeatureBankSet(1, 3, 2)
    for v in [(1.0, 0.0), (0.6, 0.8), (0.0, 1.0)]:
        bs.push(0, v)
    return bs


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
