"""Storage, retrieval and metadata-parse benchmarks.

Timings come from ``time.perf_counter``. Within one repetition the sizes are
visited round-robin in a shuffled order, one operation at a time, so slow
drift in filesystem latency lands on every size alike instead of biasing
whichever size happened to run during a slow patch. Small blobs get many
samples and large ones few (bounded by a byte budget); a repetition's row
holds the median of its samples. Every repetition is written out and medians
across repetitions are taken downstream.
"""

from __future__ import annotations

import csv
import gc
import os
import random
import shutil
import statistics
import tempfile
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, TextIO

from .content_store import ContentStore
from .encoding import SystemClock
from .errors import InvalidInput
from .identity import Registry
from .ledger import Ledger, Sequencer, TxKind
from .query import DataRecord, QueryEngine
from .validation import parse_metadata

OPERATIONS = ("store_nochain", "store_chain", "retrieve_nochain", "retrieve_chain", "metadata_parse")
CSV_HEADER = ("operation", "size_bytes", "repetition", "elapsed_seconds")
DEFAULT_SIZES = tuple(2**k for k in range(10, 25))

SAMPLE_METADATA = (
    '{"label": "truck", "confidence": 0.41042160987854004, '
    '"bounding_box": {"x1": 755, "y1": 82, "x2": 1023, "y2": 506}, '
    '"timestamp": "2024-07-10T05:55:46.304199Z", "color": "yellow", '
    '"location": {"latitude": 40.712303728004414, "longitude": -74.00629823104597}}'
)
BENCH_SOURCE = "bench-source"

RowSink = Callable[["BenchRow"], None]


@dataclass(frozen=True)
class BenchRow:
    operation: str
    size_bytes: int
    repetition: int
    elapsed_seconds: float
    # Ledger-append share of a store_chain row; kept in memory only.
    ledger_seconds: float | None = field(default=None, compare=False)

    def csv_fields(self) -> list[str]:
        return [self.operation, str(self.size_bytes), str(self.repetition), repr(self.elapsed_seconds)]


@dataclass(frozen=True)
class SamplePlan:
    """How many timed operations each size gets per repetition."""

    budget_bytes: int = 16 << 20
    min_samples: int = 3
    max_samples: int = 1000

    def samples_for(self, size: int) -> int:
        return max(self.min_samples, min(self.max_samples, self.budget_bytes // max(size, 1)))


def synthetic_blob(size: int, seed: int = 0, *tags: object) -> bytes:
    """Seeded pseudorandom bytes; identical arguments give identical blobs."""
    key = ":".join(str(part) for part in (seed, size, *tags))
    return random.Random(key).randbytes(size)


def _check_args(sizes: Sequence[int], reps: int) -> None:
    if not sizes:
        raise InvalidInput("at least one size is required")
    if any(not isinstance(s, int) or s < 0 for s in sizes):
        raise InvalidInput("sizes must be non-negative integers")
    if reps < 3:
        raise InvalidInput(f"reps must be at least 3, got {reps}")


class _ChainHarness:
    """Ledger, index and store in a scratch directory, committing one record per put."""

    def __init__(self, root: Path, seed: int):
        self.store = ContentStore(root / "store")
        self.ledger = Ledger(root / "chain.log")
        self.clock = SystemClock()
        self.sequencer = Sequencer(self.ledger, self.clock, seed)
        self.engine = QueryEngine(self.ledger, self.store, Registry(self.ledger))
        self.metadata_json = parse_metadata(SAMPLE_METADATA).to_json()

    def commit(self, cid: str, size: int) -> str:
        record = DataRecord(BENCH_SOURCE, cid, cid, self.metadata_json, size, 1.0)
        tx = self.sequencer.build(TxKind.STORE_DATA, record.encode(), BENCH_SOURCE)
        self.ledger.append_block([tx], self.clock.now_micros())
        return tx.tx_id


def _timed(fn, *args) -> tuple[float, object]:
    start = time.perf_counter()
    out = fn(*args)
    return time.perf_counter() - start, out


def _one_repetition(sizes: Sequence[int], rep: int, with_chain: bool, seed: int, plan: SamplePlan,
                    phases: Sequence[str], workdir: Path) -> Iterator[BenchRow]:
    rng = random.Random(f"{seed}:order:{rep}:{with_chain}")
    counts = {s: plan.samples_for(s) for s in sizes}
    harness = _ChainHarness(workdir, seed) if with_chain else None
    store = harness.store if harness else ContentStore(workdir / "store")
    store.put(b"warm-up")

    def rounds() -> Iterator[tuple[int, int]]:
        for i in range(max(counts.values())):
            order = [s for s in sizes if i < counts[s]]
            rng.shuffle(order)
            for size in order:
                yield i, size

    put_times: dict[int, list[float]] = defaultdict(list)
    cids: dict[int, list[str]] = defaultdict(list)
    for i, size in rounds():
        elapsed, cid = _timed(store.put, synthetic_blob(size, seed, rep, i, with_chain))
        put_times[size].append(elapsed)
        cids[size].append(cid)

    # Commits get their own interleaved pass: straight after a large put the
    # CPU caches are cold and the same fixed work runs measurably slower.
    ledger_times: dict[int, list[float]] = defaultdict(list)
    handles: dict[int, list[str]] = cids
    if harness is not None:
        handles = defaultdict(list)
        for i, size in rounds():
            elapsed, tx_id = _timed(harness.commit, cids[size][i], size)
            ledger_times[size].append(elapsed)
            handles[size].append(tx_id)
        for size in sizes:
            put_times[size] = [p + c for p, c in zip(put_times[size], ledger_times[size])]

    suffix = "chain" if with_chain else "nochain"
    if "store" in phases:
        for size in sizes:
            ledger = statistics.median(ledger_times[size]) if harness else None
            yield BenchRow(f"store_{suffix}", size, rep, statistics.median(put_times[size]), ledger)
    if "retrieve" not in phases:
        return

    fetch = harness.engine.fetch_data if harness else store.get
    get_times: dict[int, list[float]] = defaultdict(list)
    for i, size in rounds():
        elapsed, _ = _timed(fetch, handles[size][i])
        get_times[size].append(elapsed)
    for size in sizes:
        yield BenchRow(f"retrieve_{suffix}", size, rep, statistics.median(get_times[size]))


def run_storage_benchmark(
    sizes: Sequence[int] = DEFAULT_SIZES,
    reps: int = 5,
    modes: Iterable[bool] = (False, True),
    phases: Sequence[str] = ("store", "retrieve"),
    seed: int = 0,
    plan: SamplePlan = SamplePlan(),
    on_row: RowSink | None = None,
    scratch: str | os.PathLike | None = None,
) -> list[BenchRow]:
    """Time put/get without and with the ledger transaction.

    ``modes`` lists ``with_chain`` flags; each repetition runs every mode in
    turn on a fresh scratch store. Rows are handed to ``on_row`` as soon as
    they exist so a failure part-way still leaves earlier rows on disk.
    """
    _check_args(sizes, reps)
    unknown = set(phases) - {"store", "retrieve"}
    if unknown or not phases:
        raise InvalidInput(f"phases must be drawn from store/retrieve, got {list(phases)}")
    modes = list(modes)
    rows: list[BenchRow] = []
    gc_was_enabled = gc.isenabled()
    for rep in range(reps):
        for with_chain in modes:
            workdir = Path(tempfile.mkdtemp(prefix="ledgerlane-bench-", dir=scratch))
            gc.collect()
            gc.disable()
            try:
                for row in _one_repetition(sizes, rep, with_chain, seed, plan, phases, workdir):
                    rows.append(row)
                    if on_row is not None:
                        on_row(row)
            finally:
                if gc_was_enabled:
                    gc.enable()
                shutil.rmtree(workdir, ignore_errors=True)
    return rows


def bench_storage_retrieval(sizes: Sequence[int], reps: int, with_chain: bool, **kwargs) -> list[BenchRow]:
    """Store and retrieve rows for one mode: 2 operations x sizes x reps."""
    return run_storage_benchmark(sizes, reps, modes=(with_chain,), **kwargs)


def padded_metadata(size: int) -> str:
    """The sample record padded with trailing whitespace up to ``size`` bytes."""
    base = SAMPLE_METADATA
    return base + " " * max(0, size - len(base.encode("utf-8")))


def bench_metadata(sizes: Sequence[int], reps: int, samples: int = 200,
                   on_row: RowSink | None = None) -> list[BenchRow]:
    """Parse-and-validate time of a metadata document, one row per size and repetition.

    Sizes below the sample record's own length are reported at that length.
    """
    _check_args(sizes, reps)
    docs = {s: padded_metadata(s) for s in sizes}
    rows = []
    for rep in range(reps):
        for size, doc in docs.items():
            times = [_timed(parse_metadata, doc)[0] for _ in range(samples)]
            row = BenchRow("metadata_parse", len(doc.encode("utf-8")), rep, statistics.median(times))
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


# -- CSV ------------------------------------------------------------------------------


class CsvSink:
    """Append-only CSV writer that flushes after every row."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        existing = self.path.exists() and self.path.stat().st_size > 0
        if existing:
            with open(self.path, newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), None)
            if tuple(header or ()) != CSV_HEADER:
                raise InvalidInput(f"{self.path} has header {header}, expected {list(CSV_HEADER)}")
        self._fh: TextIO = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        if not existing:
            self._writer.writerow(CSV_HEADER)
            self._fh.flush()

    def __call__(self, row: BenchRow) -> None:
        self._writer.writerow(row.csv_fields())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CsvSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_csv(path: str | os.PathLike, rows: Iterable[BenchRow]) -> None:
    with CsvSink(path) as sink:
        for row in rows:
            sink(row)


def read_csv(path: str | os.PathLike) -> list[BenchRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise InvalidInput(f"{path} has header {header}, expected {list(CSV_HEADER)}")
        return [BenchRow(op, int(size), int(rep), float(sec)) for op, size, rep, sec in reader]


def medians(rows: Iterable[BenchRow], attr: str = "elapsed_seconds") -> dict[tuple[str, int], float]:
    """Median of ``attr`` per (operation, size_bytes)."""
    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for row in rows:
        value = getattr(row, attr)
        if value is not None:
            groups[(row.operation, row.size_bytes)].append(value)
    return {key: statistics.median(values) for key, values in sorted(groups.items())}


def inversions(values: Sequence[float]) -> list[int]:
    """Indices i where values[i + 1] < values[i]."""
    return [i for i in range(len(values) - 1) if values[i + 1] < values[i]]

