import numpy as np
import pytest
import torch

from modeforge.core import TrackWindow

torch.set_num_threads(1)


def make_window(rng, t=8, h=12, label="a", source_id="w"):
    return TrackWindow(rng.normal(size=2), rng.normal(size=(t, 2)), rng.normal(size=(h, 2)), label, source_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def windows(rng):
    return [make_window(rng, label="ab"[i % 2], source_id=f"s{i}") for i in range(24)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
