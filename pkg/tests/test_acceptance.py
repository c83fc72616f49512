"""The thirteen acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated together in the
terminal summary under "acceptance criteria".
"""

from __future__ import annotations

import pytest

from nonfeller.verify import CHECKS, run_check

NAMES = {i: fn.__name__.removeprefix("check_") for i, fn in CHECKS.items()}


@pytest.mark.parametrize("criterion", sorted(CHECKS), ids=[f"{i:02d}-{NAMES[i]}" for i in sorted(CHECKS)])
def test_acceptance(criterion, acceptance_log):
    res = run_check(criterion)
    line = res.line()
    print(line)
    acceptance_log.append(line)
    assert res.passed, f"{line}\n{res.to_dict()['details']}"
