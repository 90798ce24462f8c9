import itertools

import numpy as np
import pytest

# criterion -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def brute_force_w1(a, b):
    """Uniform equal-size W1 by enumerating every assignment."""
    a = np.atleast_2d(np.asarray(a, float).reshape(len(a), -1))
    b = np.atleast_2d(np.asarray(b, float).reshape(len(b), -1))
    n = len(a)
    C = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    best = min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return best / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
