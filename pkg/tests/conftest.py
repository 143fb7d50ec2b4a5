import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_vector(rng, n):
    return rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)


def random_matrix(rng, n):
    shape = (2**n, 2**n)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    def report(n: int, ok: bool, detail: str, seconds: float | None = None) -> bool:
        tail = f" [{seconds:.1f} s]" if seconds is not None else ""
        ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}{tail}"
        print(ACCEPTANCE[n])
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
