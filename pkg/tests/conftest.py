import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bnclab.instance import MipInstance

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def binary(name, A, b, c):
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[1]
    return MipInstance(name, A, np.asarray(b, float), np.asarray(c, float), n, 0, var_upper=np.ones(n))


@pytest.fixture
def tiny_knapsack():
    # min -x1 - x2 s.t. 2x1 + 2x2 <= 3, binary
    return binary("tiny", [[2, 2]], [3], [-1, -1])


# one line per acceptance criterion, repeated in the terminal summary
CRITERIA: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
