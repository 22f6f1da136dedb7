import numpy as np
import pytest

from trokens import synthgen
from trokens.data import TrajectorySet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_traj(points, vis=None, dims=(16, 16)):
    points = np.asarray(points, dtype=np.float32)
    if vis is None:
        vis = np.ones(points.shape[:2], dtype=np.float32)
    return TrajectorySet(points, np.asarray(vis, dtype=np.float32), dims)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 classes x 6 videos, default split (5 train / 3 test)."""
    out = tmp_path_factory.mktemp("tiny")
    return synthgen.generate_dataset(6, synthgen.default_specs(), out, rng_seed=3)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
