import numpy as np
import pytest

from svkit.trialset import Label

T, N = Label.TARGET, Label.NONTARGET


def labels_for(n_tgt, n_non):
    return [T] * n_tgt + [N] * n_non


def random_instance(rng, max_n=200, ties=False):
    n = int(rng.integers(2, max_n + 1))
    if ties:
        scores = rng.integers(-5, 6, size=n).astype(float)
    else:
        scores = rng.normal(size=n)
    labs = [T if x else N for x in rng.random(n) < rng.uniform(0.1, 0.9)]
    labs[0], labs[1] = T, N
    return scores, labs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
