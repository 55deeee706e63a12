import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE = {}
CRITERIA = {
    1: "gradient oracle",
    2: "parameter-count invariance",
    3: "fidelity",
    4: "counterfeit degradation",
    5: "signature integrity",
    6: "pruning robustness curve",
    7: "ambiguity resistance",
    8: "black-box p-value",
    9: "gate-activation separation",
    10: "secrecy",
    11: "infrastructure",
}


@pytest.fixture
def record():
    """Store an acceptance outcome; the terminal summary prints one line per criterion."""
    def _record(n, passed, detail):
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n} ({CRITERIA[n]}): {'PASS' if passed else 'FAIL'} | {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'} | {detail}")
        else:
            tr.write_line(f"criterion {n:2d} {name}: NOT RUN")
