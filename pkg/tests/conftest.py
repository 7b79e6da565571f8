import numpy as np
import pytest

from ppgsqa.data.synth import SynthesisConfig, synthesize_records
from ppgsqa.data.dataset import records_to_dataset
from ppgsqa.dsp import ChannelKind


@pytest.fixture(scope="session")
def small_records():
    cfg = SynthesisConfig(n_subjects=8, minutes_per_subject=4, n_test_subjects=0, seed=7)
    return synthesize_records(cfg)


@pytest.fixture(scope="session")
def small_dataset(small_records):
    kinds = (ChannelKind.CLEAN, ChannelKind.FDP, ChannelKind.SDP)
    return records_to_dataset(small_records, kinds)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        request.config._acceptance_lines.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
