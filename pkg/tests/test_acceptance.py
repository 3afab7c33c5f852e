"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -m acceptance -s`` to see the lines.
The cross-cutting checks (6, 6b) run last and inspect every run collected by
the earlier checks in this module.
"""

import pytest

from realtime_rl.acceptance import CHECKS, Suite

pytestmark = pytest.mark.acceptance

KNOWN_FAILURES = {
    "2b": "measured expected-time N* under the 0 ms/200 ms mixture stays above the formula value",
}


@pytest.fixture(scope="module")
def suite():
    return Suite()


def _param(cid, fn):
    marks = []
    if cid in KNOWN_FAILURES:
        marks.append(pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[cid]))
    return pytest.param(fn, id=f"criterion_{cid}", marks=marks)


@pytest.mark.parametrize("check", [_param(cid, fn) for cid, fn in CHECKS])
def test_criterion(check, suite):
    outcome = check(suite)
    print(outcome.line())
    if outcome.passed is None:
        pytest.skip(outcome.detail)
    assert outcome.passed, outcome.line()
