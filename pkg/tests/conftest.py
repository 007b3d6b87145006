import numpy as np
import pytest

from mgdefense import preset, run
from mgdefense.engine import with_solver
from mgdefense.scenario import beta_sweep


class RunCache:
    """Full-horizon traces shared across test modules; each preset runs once per session."""

    def __init__(self):
        self._traces = {}

    def get(self, name, **solver):
        key = (name, tuple(sorted(solver.items())))
        if key not in self._traces:
            cfg = preset(name)
            if solver:
                cfg = with_solver(cfg, **solver)
            self._traces[key] = run(cfg)
        return self._traces[key]

    def sweep(self):
        if "beta_sweep" not in self._traces:
            self._traces["beta_sweep"] = [run(cfg) for cfg in beta_sweep()]
        return self._traces["beta_sweep"]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
