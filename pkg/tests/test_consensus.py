from __future__ import annotations

from fractions import Fraction
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ledgerlane.consensus import (
    Behavior,
    Decision,
    ValidatorPool,
    ValidatorRecord,
    ValidatorStatus,
    Vote,
    decide,
    max_faulty,
    quorum_threshold,
)
from ledgerlane.errors import InvalidInput, NoActiveValidators, ZeroValidators


def test_quorum_threshold_table():
    assert [quorum_threshold(n) for n in range(1, 11)] == [1, 2, 2, 3, 4, 4, 5, 6, 6, 7]


def test_zero_validators():
    with pytest.raises(ZeroValidators):
        quorum_threshold(0)


@given(st.integers(min_value=1, max_value=10_000))
def test_quorum_threshold_is_ceiling_of_two_thirds(n):
    assert quorum_threshold(n) == math.ceil(Fraction(2 * n, 3))


def test_max_faulty():
    assert [max_faulty(n) for n in (1, 3, 4, 7, 10)] == [0, 0, 1, 2, 3]


@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_decide_matches_oracle(ballots):
    votes = [Vote(f"v{i}", "tx", b) for i, b in enumerate(ballots)]
    d = decide("tx", votes)
    assert d.approvals == sum(ballots)
    assert d.rejections == len(ballots) - sum(ballots)
    assert d.accepted == (Fraction(sum(ballots)) >= Fraction(2 * len(ballots), 3))


def test_decide_rejects_double_votes():
    with pytest.raises(InvalidInput):
        decide("tx", [Vote("a", "tx", True), Vote("a", "tx", False)])


def test_decision_roundtrip():
    d = decide("tx", [Vote("a", "tx", True), Vote("b", "tx", False), Vote("c", "tx", True)])
    assert Decision.decode(d.encode()) == d


@pytest.mark.parametrize(
    "behavior, valid, expected",
    [
        (Behavior.HONEST, True, True),
        (Behavior.HONEST, False, False),
        (Behavior.ALWAYS_APPROVE, False, True),
        (Behavior.ALWAYS_REJECT, True, False),
        (Behavior.INVERTED, True, False),
        (Behavior.INVERTED, False, True),
    ],
)
def test_cast(behavior, valid, expected):
    assert ValidatorRecord("v", behavior).cast("tx", valid) is expected


def test_random_seeded_is_reproducible():
    v = ValidatorRecord("v", Behavior.RANDOM_SEEDED, seed=5)
    first = [v.cast(f"tx{i}", True) for i in range(50)]
    assert first == [v.cast(f"tx{i}", True) for i in range(50)]
    assert 0 < sum(first) < 50


def test_record_roundtrip():
    r = ValidatorRecord("v", Behavior.INVERTED, -3, 2, ValidatorStatus.FLAGGED)
    assert ValidatorRecord.decode(r.encode()) == r


def _pool(*behaviors, **kw) -> ValidatorPool:
    return ValidatorPool([ValidatorRecord(f"v{i}", b) for i, b in enumerate(behaviors)], **kw)


def _round(pool: ValidatorPool, valid: bool = True) -> Decision:
    votes = [Vote(r.id, "tx", r.cast("tx", valid)) for r in pool.active()]
    decision = decide("tx", votes)
    pool.record_deviations(decision)
    return decision


def test_deviant_is_flagged_then_removed():
    pool = _pool(*[Behavior.HONEST] * 4, Behavior.ALWAYS_REJECT)
    statuses = []
    for _ in range(3):
        assert _round(pool).accepted
        statuses.append(pool["v4"].status)
    assert statuses == [ValidatorStatus.ACTIVE, ValidatorStatus.FLAGGED, ValidatorStatus.REMOVED]
    assert pool["v4"].deviation_count == 3
    assert len(pool.active()) == 4


def test_removal_never_shrinks_below_min_active():
    pool = _pool(*[Behavior.HONEST] * 3, Behavior.ALWAYS_REJECT)
    for _ in range(10):
        _round(pool)
    assert pool["v3"].status is ValidatorStatus.FLAGGED
    assert len(pool.active()) == 4


def test_flagged_validators_keep_voting():
    pool = _pool(*[Behavior.HONEST] * 4, Behavior.ALWAYS_REJECT)
    _round(pool)
    _round(pool)
    assert pool["v4"].status is ValidatorStatus.FLAGGED
    assert "v4" in [r.id for r in pool.active()]


def test_no_active_validators():
    from ledgerlane.consensus import run_round

    removed = ValidatorRecord("v", status=ValidatorStatus.REMOVED)
    with pytest.raises(NoActiveValidators):
        run_round("tx", None, [removed], None)


def test_duplicate_validator_ids():
    with pytest.raises(InvalidInput):
        ValidatorPool([ValidatorRecord("a"), ValidatorRecord("a")])
