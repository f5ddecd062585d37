import numpy as np
import pytest

from darkhorse.features import build_feature_set
from darkhorse.synth import GeneratorConfig, generate_matches


def feature_set_for(config):
    matches = generate_matches(config)
    fs, dropped = build_feature_set([m[0] for m in matches], {m[0].match_id: m[1] for m in matches})
    assert not dropped
    return fs


@pytest.fixture(scope="session")
def small_matches():
    return generate_matches(GeneratorConfig(n_matches=40, seed=1, base_event_rate=0.05))


@pytest.fixture(scope="session")
def small_fs():
    return feature_set_for(GeneratorConfig(n_matches=60, seed=2, base_event_rate=0.05))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
