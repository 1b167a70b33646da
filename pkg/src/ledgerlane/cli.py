"""Command-line front end.

Machine-readable results go to stdout (JSON, JSON lines or CSV); diagnostics
go to stderr. Domain errors exit with the code carried by the exception,
usage errors with 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from datetime import datetime
from pathlib import Path
from typing import Sequence

from . import bench
from .config import RunConfig, default_validators, resolve_config_path
from .errors import AlreadyExists, LedgerLaneError, MalformedQuery
from .identity import ED25519, NULL_SCHEME, KeyPair, Role, load_keypair, load_public_key, write_key_files
from .ledger import verify_log_bytes
from .node import Node
from .query import GeoBox, Query
from .validation import SubmissionEnvelope, load_metadata_document


EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False))


# -- argument parsing helpers ------------------------------------------------------

_POWER = re.compile(r"^2\^(\d+)$")


def _size_token(token: str) -> int:
    m = _POWER.match(token)
    try:
        return 2 ** int(m.group(1)) if m else int(token)
    except ValueError:
        raise UsageError(f"bad size {token!r}; use an integer, 2^k or a range 2^a..2^b") from None


def parse_sizes(tokens: Sequence[str]) -> list[int]:
    """Integers, ``2^k`` and power-of-two ranges ``2^a..2^b``, space or comma separated."""
    sizes: list[int] = []
    for token in (t for chunk in tokens for t in chunk.split(",") if t):
        if ".." in token:
            lo, hi = (_size_token(part) for part in token.split("..", 1))
            if lo < 1 or hi < lo:
                raise UsageError(f"bad size range {token!r}")
            size = lo
            while size <= hi:
                sizes.append(size)
                size *= 2
        else:
            sizes.append(_size_token(token))
    if not sizes or any(s < 0 for s in sizes):
        raise UsageError("sizes must be non-negative and at least one is required")
    return sizes


def parse_instant(text: str) -> datetime:
    try:
        value = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise MalformedQuery(f"bad timestamp {text!r}") from None
    if value.tzinfo is None:
        raise MalformedQuery(f"timestamp {text!r} needs a UTC offset or Z")
    return value


def parse_bbox(text: str) -> GeoBox:
    try:
        lat_min, lat_max, lon_min, lon_max = (float(v) for v in text.split(","))
    except ValueError:
        raise MalformedQuery("--bbox takes latmin,latmax,lonmin,lonmax") from None
    return GeoBox(lat_min, lat_max, lon_min, lon_max)


def _public_key_arg(value: str) -> bytes:
    if re.fullmatch(r"[0-9a-fA-F]{64}", value):
        return bytes.fromhex(value)
    return load_public_key(value)


# -- commands ------------------------------------------------------------------------


def _config_path(args) -> Path:
    return resolve_config_path(args.config)


def _load_config(args) -> RunConfig:
    return RunConfig.load(_config_path(args))


def _scheme(config: RunConfig):
    return NULL_SCHEME if config.signature_scheme == "null" else ED25519


def cmd_init(args) -> int:
    path = _config_path(args)
    if path.exists() and not args.force:
        raise AlreadyExists(f"{path} already exists; pass --force to overwrite")
    base = path.parent.resolve()
    config = RunConfig(
        validators=default_validators(args.validators),
        clock=args.clock,
        rng_seed=args.rng_seed,
    )
    for name in ("store_dir", "chain_path", "keys_dir", "audit_log"):
        setattr(config, name, base / getattr(config, name))
    config.validate(check_paths=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_toml(base))
    config.store_dir.mkdir(parents=True, exist_ok=True)
    config.keys_dir.mkdir(parents=True, exist_ok=True)
    print(path)
    return 0


def cmd_keygen(args) -> int:
    key = KeyPair.generate()
    seed_path, pub_path = write_key_files(args.prefix, key)
    print(key.public_key.hex())
    print(f"wrote {seed_path} and {pub_path}", file=sys.stderr)
    return 0


def cmd_enroll_admin(args) -> int:
    config = _load_config(args)
    scheme = _scheme(config)
    with Node(config) as node:
        if node.registry.principal(args.admin_id) is not None:
            node.enroll_admin(args.admin_id)  # raises AlreadyExists
        generated = args.key is None
        key = KeyPair.generate(scheme) if generated else load_keypair(args.key, scheme)
        if not node.registry.has_admin():
            message = node.bootstrap(args.admin_id, key)
        elif args.caller is not None:
            if args.caller_key is None:
                raise UsageError("--caller needs --caller-key")
            caller_key = load_keypair(args.caller_key, scheme)
            message = node.enroll_admin_as(args.admin_id, key.public_key, args.caller, caller_key)
        else:
            message = node.enroll_admin(args.admin_id, key.public_key)
        if generated:
            seed_path, _ = write_key_files(config.keys_dir / args.admin_id, key)
            print(f"admin key written to {seed_path}", file=sys.stderr)
    print(message)
    return 0


def cmd_register_user(args) -> int:
    config = _load_config(args)
    with Node(config) as node:
        admin_id = args.admin
        if admin_id is None:
            admins = [p.id for p in node.registry.principals() if p.role is Role.ADMIN]
            if len(admins) != 1:
                raise UsageError(f"--admin is required when there are {len(admins)} admins")
            admin_id = admins[0]
        admin_key = load_keypair(args.admin_key, _scheme(config))
        message = node.register_as(admin_id, admin_key, args.user_id, args.role, _public_key_arg(args.pubkey))
    print(message)
    return 0


def cmd_submit(args) -> int:
    config = _load_config(args)
    data = Path(args.data).read_bytes()
    metadata = load_metadata_document(Path(args.meta).read_bytes())
    key = load_keypair(args.key, _scheme(config))
    with Node(config) as node:
        receipt = node.submit(SubmissionEnvelope.build(data, metadata, args.source, key))
    _emit(receipt.to_dict())
    if not receipt.accepted:
        print(f"submission rejected: {receipt.verdict.detail or 'quorum not reached'}", file=sys.stderr)
        return 8
    return 0


def cmd_get(args) -> int:
    with Node(_load_config(args)) as node:
        record, blob = node.fetch_data(args.tx_id)
    if args.out is None:
        sys.stdout.buffer.write(blob)
        sys.stdout.flush()
    else:
        Path(args.out).write_bytes(blob)
        print(record.to_json())
    return 0


def cmd_query(args) -> int:
    time_range = None
    if args.start is not None or args.end is not None:
        if args.start is None or args.end is None:
            raise UsageError("--from and --to must be given together")
        time_range = (parse_instant(args.start), parse_instant(args.end))
    q = Query(
        label=args.label,
        min_confidence=args.min_confidence,
        time_range=time_range,
        geo_box=parse_bbox(args.bbox) if args.bbox else None,
        source=args.source,
    )
    with Node(_load_config(args)) as node:
        results = node.query_metadata(q)
    for result in results:
        print(result.to_json())
    return 0


def cmd_provenance(args) -> int:
    with Node(_load_config(args)) as node:
        _emit(node.provenance_of(args.tx_id).to_dict())
    return 0


def cmd_trust(args) -> int:
    with Node(_load_config(args)) as node:
        _emit(node.get_trust(args.source).to_dict())
    return 0


def cmd_validators(args) -> int:
    with Node(_load_config(args)) as node:
        for record in node.validators():
            _emit(record.to_dict())
    return 0


def cmd_verify_chain(args) -> int:
    config = _load_config(args)
    data = config.chain_path.read_bytes() if config.chain_path.exists() else b""
    bad = verify_log_bytes(data)
    if bad is None:
        print("ok")
        return 0
    print(f"corrupt {bad}")
    print(f"block log {config.chain_path} fails verification at height {bad}", file=sys.stderr)
    return 7


def cmd_bench(args) -> int:
    default = [str(s) for s in bench.DEFAULT_SIZES] if args.kind != "metadata" else ["512"]
    sizes = parse_sizes(args.sizes or default)
    out = bench.CsvSink(args.csv) if args.csv else None
    if out is None:
        print(",".join(bench.CSV_HEADER))

    def sink(row: bench.BenchRow) -> None:
        if out is not None:
            out(row)
        else:
            print(",".join(row.csv_fields()), flush=True)

    try:
        if args.kind == "metadata":
            rows = bench.bench_metadata(sizes, args.reps, on_row=sink)
        else:
            modes = {"nochain": (False,), "chain": (True,), "both": (False, True)}[args.mode]
            phases = ("store",) if args.kind == "storage" else ("retrieve",)
            rows = bench.run_storage_benchmark(sizes, args.reps, modes, phases, seed=args.seed, on_row=sink)
    finally:
        if out is not None:
            out.close()
    for (op, size), value in bench.medians(rows).items():
        print(f"{op:>16} {size:>10} B  median {value * 1e6:12.1f} us", file=sys.stderr)
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ledgerlane", description="Permissioned ledger with content-addressed storage.")
    parser.add_argument("--config", help="config file (default: $LEDGERLANE_CONFIG or ./ledgerlane.toml)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("init", help="write a default config and create its directories")
    p.add_argument("--force", action="store_true", help="overwrite an existing config")
    p.add_argument("--validators", type=int, default=4, help="number of honest validators (default 4)")
    p.add_argument("--clock", choices=("system", "logical"), default="system")
    p.add_argument("--rng-seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("keygen", help="generate an Ed25519 key pair as PREFIX.seed and PREFIX.pub")
    p.add_argument("prefix")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("enroll-admin", help="enroll an admin (the first one bootstraps the chain)")
    p.add_argument("admin_id")
    p.add_argument("--key", help="seed file of the new admin (default: generate into keys_dir)")
    p.add_argument("--caller", help="existing admin authorizing the enrollment")
    p.add_argument("--caller-key", help="seed file of --caller")
    p.set_defaults(func=cmd_enroll_admin)

    p = sub.add_parser("register-user", help="register a principal, signed by an admin")
    p.add_argument("user_id")
    p.add_argument("--role", required=True, choices=[r.value for r in Role if r is not Role.ADMIN])
    p.add_argument("--pubkey", required=True, help="hex public key or path to a .pub file")
    p.add_argument("--admin-key", required=True, help="seed file of the authorizing admin")
    p.add_argument("--admin", help="authorizing admin id (default: the only admin)")
    p.set_defaults(func=cmd_register_user)

    p = sub.add_parser("submit", help="submit a blob with its metadata for validation")
    p.add_argument("--source", required=True)
    p.add_argument("--key", required=True, help="seed file of the source")
    p.add_argument("--data", required=True)
    p.add_argument("--meta", required=True)
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("get", help="fetch a committed blob")
    p.add_argument("tx_id")
    p.add_argument("--out", help="write the blob here and print its metadata")
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("query", help="metadata query; prints JSON lines")
    p.add_argument("--label")
    p.add_argument("--min-confidence", type=float)
    p.add_argument("--from", dest="start", metavar="T")
    p.add_argument("--to", dest="end", metavar="T")
    p.add_argument("--bbox", metavar="LATMIN,LATMAX,LONMIN,LONMAX")
    p.add_argument("--source")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("provenance", help="provenance report of a transaction")
    p.add_argument("tx_id")
    p.set_defaults(func=cmd_provenance)

    p = sub.add_parser("trust", help="trust score of a source")
    p.add_argument("source")
    p.set_defaults(func=cmd_trust)

    p = sub.add_parser("validators", help="validator pool status")
    p.set_defaults(func=cmd_validators)

    p = sub.add_parser("verify-chain", help="check the block log hash chain")
    p.set_defaults(func=cmd_verify_chain)

    p = sub.add_parser("bench", help="timing benchmarks written as CSV")
    p.add_argument("kind", choices=("storage", "retrieval", "metadata"))
    p.add_argument("--sizes", nargs="+", help="byte sizes: integers, 2^k or 2^a..2^b")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--csv", help="append rows here (default: stdout)")
    p.add_argument("--mode", choices=("nochain", "chain", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ledgerlane: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LedgerLaneError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ledgerlane: {exc}", file=sys.stderr)
        return 9


if __name__ == "__main__":
    sys.exit(main())
