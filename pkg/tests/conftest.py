import numpy as np
import pytest

from svcompress.gmm import DiagonalGmm, accumulate_corpus
from svcompress.synth import SynthConfig, generate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion."""
    def _record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synth():
    cfg = SynthConfig(n_speakers=12, utts_per_speaker=4, eval_speakers=4, t_min=60, t_max=90,
                      F=3, C_true=4, d_true=2, seed=3)
    return (cfg, *generate(cfg))


@pytest.fixture(scope="session")
def tiny_stats(tiny_synth):
    _, train, _, truth = tiny_synth
    return truth.ubm, accumulate_corpus(truth.ubm, train)


@pytest.fixture
def small_gmm(rng):
    C, F = 3, 2
    return DiagonalGmm(np.array([0.2, 0.3, 0.5]), rng.standard_normal((C, F)) * 3,
                       rng.uniform(0.5, 2.0, (C, F)))
