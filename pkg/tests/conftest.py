import numpy as np
import pytest
from scipy.special import expit

from pairsearch import CandidateSet, Judge, MatrixComparator, PreferenceMatrix


def btl_matrix(latents):
    """Noiseless Bradley-Terry preference matrix for the given strengths."""
    th = np.asarray(latents, dtype=float)
    return PreferenceMatrix(expit(th[:, None] - th[None, :]))


def random_matrix(rng, n, low=0.02, high=0.98):
    """Complete matrix with independent uniform upper-triangle entries."""
    return PreferenceMatrix.from_upper(rng.uniform(low, high, size=(n, n)))


def matrix_judge(prefs):
    return Judge(CandidateSet.anonymous(prefs.n), MatrixComparator(prefs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and return ``ok``."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] AC-{number:<2} {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
