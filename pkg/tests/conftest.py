import sys

import numpy as np
import pytest

from rvinefusion.copulas import BivariateCopula

# family x rotation x parameter battery shared by the copula tests
BATTERY = (
    [BivariateCopula()]
    + [BivariateCopula("gauss", (r,)) for r in (-0.7, 0.3, 0.9)]
    + [BivariateCopula("t", (0.5, 4.0)), BivariateCopula("t", (-0.3, 10.0))]
    + [BivariateCopula("clayton", (th,), rot) for th in (0.5, 2.0, 6.0) for rot in (0, 90, 180, 270)]
    + [BivariateCopula("gumbel", (th,), rot) for th in (1.2, 3.0) for rot in (0, 90, 180, 270)]
    + [BivariateCopula("frank", (th,)) for th in (-5.0, 2.0, 12.0)]
    + [BivariateCopula("joe", (th,), rot) for th in (1.5, 4.0) for rot in (0, 90, 180, 270)]
)


def battery_ids():
    return [f"{c.code}-{'-'.join(f'{p:g}' for p in c.params) or 'none'}" for c in BATTERY]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
