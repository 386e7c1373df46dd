import numpy as np
import pytest

import _report
from shapshift import SynthSpec, synth_generate


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth2000():
    return synth_generate(SynthSpec(rows=2000), seed=42)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _report.lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in _report.formatted():
        terminalreporter.write_line(line)
