"""Acceptance criteria 1-8 at their stated tolerances.

One PASS/FAIL line per criterion is printed in the terminal summary, with the
individual checks under it. Criteria that the model cannot meet are left
failing; the analysis is in the decision ledger.
"""

import pytest

from tinsim.verify import CRITERIA

RESULTS = {}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    result = CRITERIA[number]()
    RESULTS[number] = result
    assert result.passed, result.summary()
