"""Acceptance criteria 1-9, each printing one pass/fail line (run with -s to see them)."""

import pytest

from nrulesim.acceptance import NAMES, run_criterion


@pytest.mark.parametrize("number", sorted(NAMES), ids=[f"criterion_{k}_{NAMES[k].replace(' ', '_')}" for k in sorted(NAMES)])
def test_criterion(number, capsys):
    result = run_criterion(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
