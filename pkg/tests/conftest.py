"""Shared fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from spatialcp import dataset as ds


@pytest.fixture(scope="session")
def dwellings():
    return ds.synthetic_dwellings(600, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criteria verdict lines at the end of every run."""
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
