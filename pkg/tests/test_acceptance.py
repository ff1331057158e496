"""Acceptance suite: one test per criterion, each printing a PASS/FAIL/SKIP line.

Run ``pytest -s tests/test_acceptance.py`` to see the lines, or ``dorfl verify --all``.
Criteria 6 to 8 train many models and are marked ``slow``.
"""
import pytest

from dorfl.checks import CRITERIA

SLOW = {6, 7, 8}


def _case(n):
    marks = [pytest.mark.slow] if n in SLOW else []
    return pytest.param(n, id=f"criterion{n:02d}-{CRITERIA[n].__name__.removeprefix('check_')}", marks=marks)


@pytest.mark.parametrize("number", [_case(n) for n in sorted(CRITERIA)])
def test_criterion(number):
    result = CRITERIA[number]()
    print(f"[criterion {number}] {result.line()}")
    if result.status == "SKIP":
        pytest.skip(result.line())
    assert result.passed, result.line()
