import logging

import numpy as np
import pytest

from dsgof.data import StudyTable
from dsgof.families import ConjugateSpec, Family

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(autouse=True)
def _quiet_core_logs(caplog):
    caplog.set_level(logging.ERROR, logger="dsgof")


@pytest.fixture
def verdict():
    """Record one pass/fail line for a numbered acceptance criterion, then assert it."""

    def record(number: int, label: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {label}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


SPECS = {
    Family.BINOMIAL: ConjugateSpec(Family.BINOMIAL, 2.3, 14.1),
    Family.POISSON: ConjugateSpec(Family.POISSON, 1.5, 0.8),
    Family.EXPONENTIAL: ConjugateSpec(Family.EXPONENTIAL, 3.0, 0.5),
    Family.NORMAL: ConjugateSpec.normal(1.0, 2.0),
}


@pytest.fixture(params=list(SPECS), ids=lambda f: f.value)
def spec(request):
    return SPECS[request.param]


def simulate_panel(spec: ConjugateSpec, theta: np.ndarray, rng: np.random.Generator) -> StudyTable:
    """Observations for the given parameters with family-typical sizes."""
    k = theta.size
    fam = spec.family
    if fam is Family.BINOMIAL:
        n = np.full(k, 20.0)
        return StudyTable(fam, rng.binomial(20, theta).astype(float), n)
    if fam is Family.POISSON:
        e = np.full(k, 1.0)
        return StudyTable(fam, rng.poisson(theta * e).astype(float), e)
    if fam is Family.EXPONENTIAL:
        return StudyTable(fam, rng.exponential(1.0 / theta))
    s = np.full(k, 1.0)
    return StudyTable(fam, theta + s * rng.standard_normal(k), s)


def draw_from_g(spec: ConjugateSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    a, b = spec.hyper1, spec.hyper2
    if spec.family is Family.BINOMIAL:
        return rng.beta(a, b, k)
    if spec.family is Family.NORMAL:
        return rng.normal(a, np.sqrt(b), k)
    return rng.gamma(a, b, k)
