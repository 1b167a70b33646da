"""Trust scores for untrusted sources.

score = w_h * h + w_c * c, where h = (accepted + 1) / (accepted + rejected + 2)
is the Laplace-smoothed acceptance rate and c is the mean agreement with
nearby trusted records (1 when nothing has been cross-validated yet).
Trusted sources are pinned at 1.0. Scores are advisory and stored on-chain
under ``trust/<source>``.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

from . import encoding as enc
from .errors import InvalidInput, NotUntrustedSource
from .identity import Registry, Role
from .ledger import Ledger, Sequencer, TxKind
from .validation import MetadataRecord

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class TrustWeights:
    history: float = 0.7
    crossval: float = 0.3

    def __post_init__(self):
        if self.history < 0 or self.crossval < 0 or not math.isclose(self.history + self.crossval, 1.0, abs_tol=1e-9):
            raise InvalidInput("trust weights must be non-negative and sum to 1")

    def exact(self) -> tuple[Fraction, Fraction]:
        return _decimal_fraction(self.history), _decimal_fraction(self.crossval)


@lru_cache(maxsize=64)
def _decimal_fraction(x: float) -> Fraction:
    return Fraction(repr(x))


@dataclass(frozen=True)
class TrustWindow:
    seconds: float = 60.0
    meters: float = 100.0


def compute_score(accepted: int, rejected: int, crossval_sum: float, crossval_n: int,
                  weights: TrustWeights = TrustWeights()) -> float:
    """Evaluated in exact rationals (weights at their decimal value), then rounded once."""
    h = Fraction(accepted + 1, accepted + rejected + 2)
    c = Fraction(crossval_sum) / crossval_n if crossval_n else Fraction(1)
    return float(weights.exact()[0] * h + weights.exact()[1] * c)


@dataclass(frozen=True)
class TrustScore:
    source: str
    accepted_count: int
    rejected_count: int
    crossval_sum: float
    crossval_n: int
    score: float
    updated_at_us: int

    def encode(self) -> bytes:
        return enc.frame(
            enc.text(self.source),
            enc.u64(self.accepted_count),
            enc.u64(self.rejected_count),
            enc.f64(self.crossval_sum),
            enc.u64(self.crossval_n),
            enc.f64(self.score),
            enc.i64(self.updated_at_us),
        )

    @classmethod
    def decode(cls, data: bytes) -> "TrustScore":
        f = enc.unframe(data, 7)
        return cls(
            enc.read_text(f[0]), enc.read_u64(f[1]), enc.read_u64(f[2]), enc.read_f64(f[3]),
            enc.read_u64(f[4]), enc.read_f64(f[5]), enc.read_i64(f[6]),
        )

    def to_dict(self) -> dict:
        return {
            "accepted_count": self.accepted_count,
            "crossval_n": self.crossval_n,
            "crossval_sum": self.crossval_sum,
            "rejected_count": self.rejected_count,
            "score": self.score,
            "source": self.source,
            "updated_at": enc.iso_micros(self.updated_at_us),
        }


@dataclass(frozen=True)
class CrossValidationResult:
    agreement: float | None = None
    reference_tx: str | None = None

    def __post_init__(self):
        if (self.agreement is None) != (self.reference_tx is None):
            raise InvalidInput("agreement and reference_tx must be both present or both absent")


@dataclass(frozen=True)
class TrustEvent:
    """One decision folded into a score, kept on-chain so history can be replayed."""

    tx_id: str
    accepted: bool
    agreement: float | None

    def encode(self) -> bytes:
        agreement = None if self.agreement is None else enc.f64(self.agreement)
        return enc.frame(enc.text(self.tx_id), enc.flag(self.accepted), enc.optional(agreement))

    @classmethod
    def decode(cls, data: bytes) -> "TrustEvent":
        tx, accepted, agreement = enc.unframe(data, 3)
        a = enc.read_optional(agreement)
        return cls(enc.read_text(tx), enc.read_flag(accepted), None if a is None else enc.read_f64(a))


def trust_update_payload(score: TrustScore, event: TrustEvent) -> bytes:
    return enc.frame(enc.text(score.source), score.encode(), event.encode())


def read_trust_update(payload: bytes) -> tuple[TrustScore, TrustEvent]:
    _, score, event = enc.unframe(payload, 3)
    return TrustScore.decode(score), TrustEvent.decode(event)


def score_from_history(events: Iterable[TrustEvent], weights: TrustWeights = TrustWeights()) -> float:
    """Recompute a score from scratch out of its full event history."""
    events = list(events)
    accepted = sum(1 for e in events if e.accepted)
    agreements = [e.agreement for e in events if e.agreement is not None]
    return compute_score(accepted, len(events) - accepted, math.fsum(agreements), len(agreements), weights)


# -- cross-validation -------------------------------------------------------------


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def agreement(candidate: MetadataRecord, reference: MetadataRecord) -> float:
    labels = 1 if candidate.label == reference.label else 0
    colors = 1 if candidate.color.casefold() == reference.color.casefold() else 0
    return (labels + colors) / 2


class TrustedIndex:
    """Committed trusted-source records ordered by capture time."""

    def __init__(self) -> None:
        self._keys: list[tuple[int, str]] = []
        self._records: dict[str, MetadataRecord] = {}

    def add(self, tx_id: str, record: MetadataRecord) -> None:
        if tx_id in self._records:
            return
        bisect.insort(self._keys, (record.instant_ns, tx_id))
        self._records[tx_id] = record

    def __len__(self) -> int:
        return len(self._keys)

    def within(self, instant_ns: int, window_ns: int) -> list[tuple[int, str, MetadataRecord]]:
        lo = bisect.bisect_left(self._keys, (instant_ns - window_ns, ""))
        hi = bisect.bisect_right(self._keys, (instant_ns + window_ns, "\uffff"))
        return [(t, tx, self._records[tx]) for t, tx in self._keys[lo:hi]]


def cross_validate(record: MetadataRecord, trusted_index: TrustedIndex,
                   window: TrustWindow = TrustWindow()) -> CrossValidationResult:
    """Compare against the time-nearest trusted record inside the window.

    Ties on time distance go to the spatially closer record, then to the
    smaller transaction id.
    """
    t = record.instant_ns
    best = None
    for when, tx_id, ref in trusted_index.within(t, int(window.seconds * 1_000_000_000)):
        dist = haversine_m(record.location.latitude, record.location.longitude,
                           ref.location.latitude, ref.location.longitude)
        if dist > window.meters:
            continue
        key = (abs(when - t), dist, tx_id)
        if best is None or key < best[0]:
            best = (key, tx_id, ref)
    if best is None:
        return CrossValidationResult()
    return CrossValidationResult(agreement(record, best[2]), best[1])


# -- the on-chain score book --------------------------------------------------------


class TrustBook:
    """Latest score per untrusted source, including updates not yet in a block."""

    def __init__(self, ledger: Ledger, registry: Registry, sequencer: Sequencer | None = None,
                 weights: TrustWeights = TrustWeights()):
        self.ledger = ledger
        self.registry = registry
        self.sequencer = sequencer
        self.weights = weights
        self._scores: dict[str, TrustScore] = {}
        self._lock = threading.Lock()
        for key in ledger.state_keys("trust/"):
            score, _ = read_trust_update(ledger.get_state(key))
            self._scores[score.source] = score

    def _prior(self, source: str, since_us: int) -> TrustScore:
        return TrustScore(source, 0, 0, 0.0, 0, compute_score(0, 0, 0.0, 0, self.weights), since_us)

    def get_trust(self, source: str) -> TrustScore:
        principal = self.registry.get(source)
        if principal.role is Role.TRUSTED_SOURCE:
            return TrustScore(source, 0, 0, 0.0, 0, 1.0, principal.enrolled_at_us)
        if principal.role is not Role.UNTRUSTED_SOURCE:
            raise NotUntrustedSource(f"{source} is a {principal.role.value}, not a data source")
        with self._lock:
            return self._scores.get(source) or self._prior(source, principal.enrolled_at_us)

    def update_on_decision(self, source: str, accepted: bool,
                           crossval: CrossValidationResult = CrossValidationResult(),
                           tx_id: str = "") -> TrustScore:
        principal = self.registry.principal(source)
        if principal is None or principal.role is not Role.UNTRUSTED_SOURCE:
            raise NotUntrustedSource(f"{source} is not a registered untrusted source")
        with self._lock:
            old = self._scores.get(source) or self._prior(source, principal.enrolled_at_us)
            a = old.accepted_count + (1 if accepted else 0)
            r = old.rejected_count + (0 if accepted else 1)
            s, n = old.crossval_sum, old.crossval_n
            if crossval.agreement is not None:
                s += crossval.agreement
                n += 1
            now = self.sequencer.clock.now_micros() if self.sequencer is not None else old.updated_at_us
            new = TrustScore(source, a, r, s, n, compute_score(a, r, s, n, self.weights), now)
            if self.sequencer is not None:
                event = TrustEvent(tx_id, accepted, crossval.agreement)
                self.sequencer.propose(TxKind.TRUST_UPDATE, trust_update_payload(new, event), "<consensus>")
            self._scores[source] = new
            return new

    def history(self, source: str) -> list[TrustEvent]:
        """Every committed decision event for ``source``, in chain order."""
        events = []
        for block in self.ledger.blocks:
            for tx in block.txs:
                if tx.kind is TxKind.TRUST_UPDATE:
                    score, event = read_trust_update(tx.payload)
                    if score.source == source:
                        events.append(event)
        return events

    def scores(self) -> list[TrustScore]:
        with self._lock:
            return [self._scores[k] for k in sorted(self._scores)]

