"""Shared fixtures and the acceptance-summary reporter."""

from __future__ import annotations

import numpy as np
import pytest

from rdcov import Dataset

# One line per acceptance criterion, printed at the end of the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def record_acceptance(criterion: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_LINES.append(f"ACCEPTANCE {criterion}: {status}{suffix}")


def make_dataset(
    n: int = 200,
    d: int = 1,
    seed: int = 0,
    tau: float = 2.0,
    jump_z: float = 0.0,
    noise: float = 0.3,
    cluster_count: int | None = None,
) -> Dataset:
    """Small random dataset with a known jump, for unit tests."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, n)
    t = (x >= 0.0).astype(float)
    z = 0.4 * x[:, None] + rng.normal(0.0, 0.5, (n, d)) + jump_z * t[:, None]
    y = 1.0 + tau * t + 1.5 * x - 0.7 * t * x + rng.normal(0.0, noise, n)
    if d > 0:
        y = y + z @ np.linspace(0.5, 0.8, d)
    cluster = rng.integers(0, cluster_count, n) if cluster_count else None
    return Dataset(y=y, x=x, z=z, cluster=cluster)


@pytest.fixture
def dataset():
    return make_dataset()
