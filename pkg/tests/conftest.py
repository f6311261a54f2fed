import numpy as np
import pytest

from nopo.model import NopoParams


@pytest.fixture
def small_g():
    """The small-gain oscillator used throughout the solitary benchmarks."""
    return lambda p: NopoParams.from_pump(50.0, 0.05, p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    config = request.config
    term = config.pluginmanager.getplugin("terminalreporter")

    def emit(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        config.stash[_ACCEPTANCE].append(line)
        if term is not None:
            term.write_line("")
            term.write_line(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
