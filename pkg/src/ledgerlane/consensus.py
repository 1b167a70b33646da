"""Simulated BFT validation rounds.

Every voting validator runs the validation contract on its own, turns the
verdict into a vote according to its configured behaviour, and the round is
accepted when at least ceil(2n/3) of the n voting validators approve. Votes
that disagree with the final decision count as deviations; repeat deviants
are flagged and then removed, never shrinking the pool below ``min_active``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from . import encoding as enc
from .encoding import DecodeError
from .errors import InvalidInput, NoActiveValidators, ZeroValidators
from .validation import SubmissionEnvelope, validate_transaction


class Behavior(str, Enum):
    HONEST = "Honest"
    ALWAYS_APPROVE = "AlwaysApprove"
    ALWAYS_REJECT = "AlwaysReject"
    INVERTED = "Inverted"
    RANDOM_SEEDED = "RandomSeeded"


ADVERSARIAL = (Behavior.ALWAYS_APPROVE, Behavior.ALWAYS_REJECT, Behavior.INVERTED, Behavior.RANDOM_SEEDED)


class ValidatorStatus(str, Enum):
    ACTIVE = "Active"
    FLAGGED = "Flagged"
    REMOVED = "Removed"


def quorum_threshold(n_active: int) -> int:
    if n_active < 1:
        raise ZeroValidators("a round needs at least one validator")
    return -(-2 * n_active // 3)


def max_faulty(n: int) -> int:
    return (n - 1) // 3


@dataclass
class ValidatorRecord:
    id: str
    behavior: Behavior = Behavior.HONEST
    seed: int = 0
    deviation_count: int = 0
    status: ValidatorStatus = ValidatorStatus.ACTIVE

    def __post_init__(self):
        self.behavior = Behavior(self.behavior)
        self.status = ValidatorStatus(self.status)

    @property
    def votes(self) -> bool:
        """Flagged validators still vote; only removal takes them out."""
        return self.status is not ValidatorStatus.REMOVED

    def cast(self, tx_id: str, verdict_valid: bool) -> bool:
        if self.behavior is Behavior.HONEST:
            return verdict_valid
        if self.behavior is Behavior.ALWAYS_APPROVE:
            return True
        if self.behavior is Behavior.ALWAYS_REJECT:
            return False
        if self.behavior is Behavior.INVERTED:
            return not verdict_valid
        return random.Random(f"{self.seed}:{self.id}:{tx_id}").random() < 0.5

    def encode(self) -> bytes:
        return enc.frame(
            enc.text(self.id),
            enc.text(self.behavior.value),
            enc.i64(self.seed),
            enc.u64(self.deviation_count),
            enc.text(self.status.value),
        )

    @classmethod
    def decode(cls, data: bytes) -> "ValidatorRecord":
        f = enc.unframe(data, 5)
        try:
            behavior = Behavior(enc.read_text(f[1]))
            status = ValidatorStatus(enc.read_text(f[4]))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        return cls(enc.read_text(f[0]), behavior, enc.read_i64(f[2]), enc.read_u64(f[3]), status)

    def to_dict(self) -> dict:
        return {
            "behavior": self.behavior.value,
            "deviation_count": self.deviation_count,
            "id": self.id,
            "seed": self.seed,
            "status": self.status.value,
        }


@dataclass(frozen=True)
class Vote:
    validator: str
    tx_id: str
    approve: bool


@dataclass(frozen=True)
class Decision:
    tx_id: str
    approvals: int
    rejections: int
    quorum_threshold: int
    accepted: bool
    votes: tuple[Vote, ...] = field(default=())

    def encode(self) -> bytes:
        return enc.frame(
            enc.text(self.tx_id),
            enc.u64(self.approvals),
            enc.u64(self.rejections),
            enc.u64(self.quorum_threshold),
            enc.flag(self.accepted),
            enc.frame_list(enc.frame(enc.text(v.validator), enc.flag(v.approve)) for v in self.votes),
        )

    @classmethod
    def decode(cls, data: bytes) -> "Decision":
        f = enc.unframe(data, 6)
        tx_id = enc.read_text(f[0])
        votes = []
        for item in enc.unframe(f[5]):
            who, approve = enc.unframe(item, 2)
            votes.append(Vote(enc.read_text(who), tx_id, enc.read_flag(approve)))
        return cls(
            tx_id, enc.read_u64(f[1]), enc.read_u64(f[2]), enc.read_u64(f[3]),
            enc.read_flag(f[4]), tuple(votes),
        )

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "approvals": self.approvals,
            "quorum_threshold": self.quorum_threshold,
            "rejections": self.rejections,
            "tx_id": self.tx_id,
            "votes": {v.validator: v.approve for v in self.votes},
        }


def decide(tx_id: str, votes: Sequence[Vote]) -> Decision:
    """Aggregate one vote per voting validator into a quorum decision."""
    seen = set()
    for v in votes:
        if v.validator in seen:
            raise InvalidInput(f"validator {v.validator} voted twice on {tx_id}")
        seen.add(v.validator)
    threshold = quorum_threshold(len(votes))
    approvals = sum(1 for v in votes if v.approve)
    return Decision(tx_id, approvals, len(votes) - approvals, threshold, approvals >= threshold, tuple(votes))


def run_round(tx_id: str, envelope: SubmissionEnvelope, validators: Iterable[ValidatorRecord], registry) -> Decision:
    voters = [v for v in validators if v.votes]
    if not voters:
        raise NoActiveValidators("no active validators")
    votes = []
    for validator in voters:
        verdict = validate_transaction(tx_id, envelope, registry)
        votes.append(Vote(validator.id, tx_id, validator.cast(tx_id, verdict.valid)))
    return decide(tx_id, votes)


class ValidatorPool:
    def __init__(
        self,
        records: Iterable[ValidatorRecord],
        flag_threshold: int = 2,
        removal_threshold: int = 3,
        min_active: int = 4,
    ):
        if flag_threshold < 1 or removal_threshold < 1:
            raise InvalidInput("deviation thresholds must be positive")
        self._records: dict[str, ValidatorRecord] = {}
        for r in records:
            if r.id in self._records:
                raise InvalidInput(f"duplicate validator {r.id}")
            self._records[r.id] = r
        self.flag_threshold = flag_threshold
        self.removal_threshold = removal_threshold
        self.min_active = min_active

    def __iter__(self):
        return iter(self._records.values())

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, validator_id: str) -> ValidatorRecord:
        return self._records[validator_id]

    def active(self) -> list[ValidatorRecord]:
        return [r for r in self._records.values() if r.votes]

    def replace(self, record: ValidatorRecord) -> None:
        self._records[record.id] = record

    def run_round(self, tx_id: str, envelope: SubmissionEnvelope, registry) -> Decision:
        return run_round(tx_id, envelope, self._records.values(), registry)

    def record_deviations(self, decision: Decision) -> list[ValidatorRecord]:
        """Charge every dissenting vote; returns the records that changed."""
        changed = []
        for vote in decision.votes:
            if vote.approve == decision.accepted:
                continue
            rec = self._records[vote.validator]
            rec.deviation_count += 1
            can_remove = len(self.active()) - 1 >= self.min_active
            if rec.deviation_count >= self.removal_threshold and can_remove:
                rec.status = ValidatorStatus.REMOVED
            elif rec.deviation_count >= min(self.flag_threshold, self.removal_threshold):
                rec.status = ValidatorStatus.FLAGGED
            changed.append(rec)
        return changed
