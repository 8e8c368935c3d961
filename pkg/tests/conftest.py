import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from incentive_design.fixtures import example1, example2, grid_a, grid_b  # noqa: E402
from incentive_design.pipeline import synthesize  # noqa: E402
from incentive_design.scltl import parse_scltl, to_dfa  # noqa: E402


def fixture_dfa(fx):
    return to_dfa(parse_scltl(fx.spec), fx.model.atomic_props)


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture(scope="session")
def ex2():
    return example2()


@pytest.fixture(scope="session")
def gridb():
    return grid_b()


@pytest.fixture(scope="session")
def grida():
    return grid_a(0)


@pytest.fixture(scope="session")
def synth():
    """Memoized default synthesis per fixture name."""
    cache = {}

    def get(fx, **kw):
        key = (fx.name, str(fx.metadata), tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = synthesize(fx.model, fx.horizon, fixture_dfa(fx), **kw)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
