import numpy as np
import pytest

# criterion id -> (status, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
    line = f"acceptance {criterion}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:>4}  {status}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
