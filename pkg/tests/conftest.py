from __future__ import annotations

import itertools

import numpy as np
import pytest

from uel.ensemble import EnsembleFit

# Acceptance results collected by test_acceptance.py and echoed in the summary.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    prev = ACCEPTANCE.get(criterion)
    if prev is not None:
        ok = ok and prev[0]
        detail = f"{prev[1]}; {detail}"
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}")


def random_fit(rng: np.random.Generator, n: int, s: int, B: int) -> EnsembleFit:
    """Fit record with arbitrary tree values and uniformly drawn memberships."""
    memberships = np.sort(np.argsort(rng.random((B, n)), axis=1)[:, :s], axis=1)
    return EnsembleFit(n=n, s=s, tree_values=rng.normal(size=B), memberships=memberships,
                       x0=np.zeros(1))


def enumeration_fit(y: np.ndarray, s: int) -> EnsembleFit:
    """Every size-``s`` subset once, kernel = mean response of the subset."""
    n = len(y)
    subsets = np.array(list(itertools.combinations(range(n), s)), dtype=np.int64)
    values = y[subsets].mean(axis=1)
    return EnsembleFit(n=n, s=s, tree_values=values, memberships=subsets, x0=np.zeros(1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
