import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from policyguard.model import load
from policyguard.solver import Solver, SolverConfig
from policyguard.translator import ScriptedBackend, TranslatorPool

FIXTURES = Path(__file__).resolve().parent / "fixtures"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def solver():
    s = Solver(SolverConfig(timeout=10.0))
    yield s
    s.close()


@pytest.fixture(scope="session")
def park():
    return load(FIXTURES / "park.json")


@pytest.fixture(scope="session")
def ryanair():
    return load(FIXTURES / "ryanair.json")


@pytest.fixture(scope="session")
def ryanair_vetted():
    return load(FIXTURES / "ryanair_vetted.json")


@pytest.fixture
def park_pool():
    b = ScriptedBackend.from_dir(FIXTURES / "scripted" / "park")
    return TranslatorPool([b, b, b])


@pytest.fixture
def park_split_pool():
    root = FIXTURES / "scripted" / "park_split"
    return TranslatorPool([ScriptedBackend.from_dir(root / f"t{i}") for i in range(3)])


@pytest.fixture
def ryanair_pool():
    b = ScriptedBackend.from_dir(FIXTURES / "scripted" / "ryanair")
    return TranslatorPool([b, b, b])


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
