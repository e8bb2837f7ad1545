import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nsrd.brdf import build_lut

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def small_lut():
    """Coarse table: enough for demodulation plumbing, cheap to build."""
    return build_lut(resolution=32, spp=64, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f with respect to every entry of x (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def pytest_report_header(config):
    return f"NSRD_CACHE={os.environ.get('NSRD_CACHE', '~/.cache/nsrd')}"


VERDICTS = {}


def record(criterion, ok, detail=""):
    """Store the one-line verdict for an acceptance criterion; returns ``ok`` for asserting."""
    VERDICTS[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
