import numpy as np
import pytest

ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = (passed, detail)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, ridge=0.1):
    m = rng.standard_normal((k, k))
    return m @ m.T / k + ridge * np.eye(k)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[0].rstrip("abc")), s)):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
