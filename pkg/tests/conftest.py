import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from flexbcpg.blur import SeparableBlur, degrade
from flexbcpg.imaging import DeblurProblem, phantom
from flexbcpg.wavelet import HaarFrame


def small_deblur(side=16, levels=2, grouping="orientation", fast_coarse=True, seed=0,
                 size=5, std=1.5):
    blur = SeparableBlur.gaussian(side, size, std)
    z = degrade(phantom(side), blur, 0.01, seed)
    return DeblurProblem(HaarFrame(side, levels), blur, z, 1e-3, 1e-2, 1e-2,
                         grouping, fast_coarse)


@pytest.fixture
def deblur16():
    return small_deblur()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config._acceptance_lines

    def add(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return passed
    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("AC-")[1].split()[0])):
            terminalreporter.write_line(line)
