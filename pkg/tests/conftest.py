import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adathresh.design import Design
from adathresh.exposure import ThresholdGrid, exact_probabilities
from adathresh.graph import Graph, kth_power_cycle

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cycle5():
    return kth_power_cycle(5, 1)


@pytest.fixture(scope="session")
def cycle5_exact(cycle5):
    grid = ThresholdGrid.for_graph(cycle5)
    return exact_probabilities(cycle5, Design("unit", 0.5), grid)


@pytest.fixture(scope="session")
def cycle12():
    return kth_power_cycle(12, 2)


@pytest.fixture(scope="session")
def cycle12_exact(cycle12):
    return exact_probabilities(cycle12, Design("unit", 0.5), ThresholdGrid.for_graph(cycle12))


@pytest.fixture
def edge2():
    return Graph.from_edges(2, [(0, 1)])


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


def pytest_collection_modifyitems(items):
    for item in items:
        if "acceptance" in item.nodeid:
            item.add_marker(pytest.mark.slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
