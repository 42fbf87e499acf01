import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evsynth import FrameSequence, ModelParams  # noqa: E402

NOISE_FREE = ModelParams(k1=1.0, k2=1e-9, k3=0.0, k4=0.0, k5=0.0, k6=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ramp_fixture(width=4, height=3, levels=(100, 500, 120, 600), dt=10_000):
    frames = np.stack([np.full((height, width), lv, np.uint16) for lv in levels])
    ts = np.arange(len(levels), dtype=np.uint64) * dt
    return FrameSequence(width, height, 10, ts, frames)



# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
