"""Numbered acceptance criteria at their stated tolerances.

Each test prints ``criterion k: PASS|FAIL <detail>``; the lines are also
collected and repeated in the pytest terminal summary. Run directly with
``python -m tests.test_acceptance [k ...]`` for the bare list.
"""

import sys
import time

import pytest

from tests import criteria

CHECKS = {
    1: criteria.criterion_1,
    2: criteria.criterion_2,
    3: criteria.criterion_3,
    4: criteria.criterion_4,
    5: criteria.criterion_5,
    6: criteria.criterion_6,
    7: criteria.criterion_7,
    8: criteria.criterion_8,
    9: criteria.criterion_9,
    10: criteria.criterion_10,
    11: criteria.criterion_11,
    12: criteria.criterion_12,
    13: criteria.criterion_13,
}
MONTE_CARLO = {1, 2, 3, 11}
RESULTS: dict[int, str] = {}


def evaluate(k: int) -> tuple[bool, str]:
    t = time.perf_counter()
    ok, detail = CHECKS[k]()
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail} [{time.perf_counter() - t:.0f}s]"
    RESULTS[k] = line
    print(line)
    return ok, line


@pytest.mark.parametrize("k", [pytest.param(k, marks=pytest.mark.slow) if k in MONTE_CARLO else k
                               for k in CHECKS])
def test_criterion(k):
    ok, line = evaluate(k)
    assert ok, line


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or list(CHECKS)
    outcomes = [evaluate(k)[0] for k in wanted]
    sys.exit(0 if all(outcomes) else 1)
