"""Shared fixtures and the acceptance-criteria summary."""

import numpy as np
import pytest

from negcon.core import ModelConfig, frames_from_columns
from negcon.nameship import NameshipParams

# criterion number -> (passed, one-line message); filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, passed, message):
    ACCEPTANCE[number] = (bool(passed), message)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {message}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, message = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {message}")


def random_columns(n, rng, all_types=True):
    """Raw dyad columns with plausible traits, sexes and ages.

    With ``all_types`` the nameship indicators cycle through s = 1, 2, 3.
    """
    s = (np.arange(n) % 3) + 1 if all_types else rng.integers(1, 4, n)
    columns = {
        "y1_b": rng.normal(28, 4, n),
        "y1_f": rng.normal(28.5, 4, n),
        "y2_b": rng.normal(27, 4, n),
        "y2_f": rng.normal(27.5, 4, n),
        "sex1": rng.integers(0, 2, n).astype(float),
        "age1": rng.normal(45, 10, n),
        "sex2": rng.integers(0, 2, n).astype(float),
        "age2": rng.normal(45, 10, n),
    }
    return columns, (s >= 2).astype(int), ((s == 1) | (s == 3)).astype(int)


def make_frames(n=60, seed=0, config=None, **overrides):
    rng = np.random.default_rng(seed)
    columns, r1, r2 = random_columns(n, rng)
    columns.update(overrides)
    return frames_from_columns(columns, r1, r2, config or ModelConfig())


def random_theta(frames, rng, scale=0.5):
    like = NameshipParams.zeros(frames)
    return NameshipParams.from_vector(rng.normal(0, scale, len(like.vector)), like)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def frames():
    return make_frames(90, seed=3)
