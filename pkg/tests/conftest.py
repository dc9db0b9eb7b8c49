from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

DATA = Path(__file__).parent / "data"

settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def data_dir() -> Path:
    return DATA


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, out = x.ravel(), grad.ravel()
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f(x)
        flat[k] = old - h
        down = f(x)
        flat[k] = old
        out[k] = (up - down) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


CHAIN_OBO = """\
[Term]
id: T:A
name: alpha

[Term]
id: T:B
name: beta
is_a: T:A

[Term]
id: T:C
name: gamma
is_a: T:B
"""

DIAMOND_OBO = """\
[Term]
id: T:A
name: top

[Term]
id: T:B
name: left
is_a: T:A

[Term]
id: T:C
name: right
relationship: part_of T:A

[Term]
id: T:D
name: bottom
is_a: T:B
is_a: T:C
"""


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid or "::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::test_criterion_", 1)[1]
            number = int(name.split("_", 1)[0])
            ok = outcome == "passed" and results.get(number, (True,))[0]
            results[number] = (ok, name.split("_", 1)[1].replace("_", " "))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, label = results[number]
        terminalreporter.write_line(f"criterion {number:2d} {label}: {'PASS' if ok else 'FAIL'}")
