import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cusplab import groups
from cusplab.geometry import ParabolicFrame, rotation_between

settings.register_profile(
    "cusplab", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("cusplab")


@functools.lru_cache(maxsize=None)
def preset(name):
    return groups.preset(name)


@functools.lru_cache(maxsize=None)
def cusps(name, L=5):
    return tuple(groups.detect_cusps(preset(name), L).cusps)


def random_rotation(rng, n):
    """Element of K (rotation of the spatial coordinates) from two random directions."""
    k = np.eye(n + 2)
    for _ in range(3):
        a, b = rng.normal(size=n + 1), rng.normal(size=n + 1)
        k = k @ rotation_between(a / np.linalg.norm(a), b / np.linalg.norm(b))
    return k


def random_frame(rng, n):
    return ParabolicFrame(n, random_rotation(rng, n))


def random_group_element(rng, n, spread=1.0):
    frame = ParabolicFrame.standard(n)
    x = rng.normal(size=n) * spread
    t = float(np.exp(rng.normal() * spread * 0.5))
    return frame.translation(x) @ frame.dilation(t) @ random_rotation(rng, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    """Log one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
