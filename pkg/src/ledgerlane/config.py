"""Run configuration (TOML).

Relative paths are resolved against the directory holding the config file.
The config path itself comes from ``--config``, else ``$LEDGERLANE_CONFIG``,
else ``./ledgerlane.toml``.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

from .consensus import Behavior
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_VAR = "LEDGERLANE_CONFIG"
DEFAULT_CONFIG_NAME = "ledgerlane.toml"


@dataclass(frozen=True)
class ValidatorSpec:
    id: str
    behavior: Behavior = Behavior.HONEST
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "behavior", Behavior(self.behavior))


def default_validators(n: int = 4) -> list[ValidatorSpec]:
    return [ValidatorSpec(f"validator-{i}") for i in range(1, n + 1)]


@dataclass
class RunConfig:
    store_dir: Path = Path("store")
    chain_path: Path = Path("chain.log")
    keys_dir: Path = Path("keys")
    audit_log: Path = Path("rounds.jsonl")
    validators: list[ValidatorSpec] = field(default_factory=default_validators)
    flag_threshold: int = 2
    removal_threshold: int = 3
    min_active: int = 4
    history_weight: float = 0.7
    crossval_weight: float = 0.3
    window_seconds: float = 60.0
    window_meters: float = 100.0
    min_trust: float | None = None
    batch_size: int = 64
    batch_timeout_ms: int = 500
    rng_seed: int = 0
    clock: str = "system"
    signature_scheme: str = "ed25519"

    @property
    def checkpoint_path(self) -> Path:
        return self.chain_path.with_name(self.chain_path.name + ".state")

    def validate(self, check_paths: bool = False) -> "RunConfig":
        positive = {
            "flag_threshold": self.flag_threshold,
            "removal_threshold": self.removal_threshold,
            "min_active": self.min_active,
            "batch_size": self.batch_size,
            "batch_timeout_ms": self.batch_timeout_ms,
        }
        for name, value in positive.items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.window_seconds <= 0 or self.window_meters <= 0:
            raise ConfigError("cross-validation window bounds must be positive")
        if self.history_weight < 0 or self.crossval_weight < 0:
            raise ConfigError("trust weights must be non-negative")
        if not math.isclose(self.history_weight + self.crossval_weight, 1.0, abs_tol=1e-9):
            raise ConfigError("trust weights must sum to 1.0")
        if self.min_trust is not None and not (0.0 <= self.min_trust <= 1.0):
            raise ConfigError("min_trust must lie in [0, 1]")
        if self.clock not in ("system", "logical"):
            raise ConfigError(f"clock must be 'system' or 'logical', got {self.clock!r}")
        if self.signature_scheme not in ("ed25519", "null"):
            raise ConfigError(f"unknown signature scheme {self.signature_scheme!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in 64 bits")
        ids = [v.id for v in self.validators]
        if not ids:
            raise ConfigError("the validator pool is empty")
        if len(set(ids)) != len(ids):
            raise ConfigError("validator ids must be unique")
        if check_paths:
            for path in (self.store_dir, self.chain_path.parent, self.keys_dir, self.audit_log.parent):
                probe = path
                while not probe.exists() and probe.parent != probe:
                    probe = probe.parent
                if not os.access(probe, os.W_OK):
                    raise ConfigError(f"{path} is not writable")
        return self

    # -- (de)serialization --------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: Path = Path(".")) -> "RunConfig":
        known_sections = {"paths", "consensus", "trust", "ledger", "rng_seed", "signature_scheme"}
        unknown = set(raw) - known_sections
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for name in ("paths", "consensus", "trust", "ledger"):
            if not isinstance(raw.get(name, {}), dict):
                raise ConfigError(f"[{name}] must be a table")
        paths = raw.get("paths", {})
        consensus = raw.get("consensus", {})
        cfg = cls()
        for key in ("store_dir", "chain_path", "keys_dir", "audit_log"):
            if key in paths:
                setattr(cfg, key, Path(paths[key]))
            setattr(cfg, key, base_dir / getattr(cfg, key))
        try:
            if "validators" in consensus:
                cfg.validators = [
                    ValidatorSpec(str(v["id"]), Behavior(v.get("behavior", "Honest")), int(v.get("seed", 0)))
                    for v in consensus["validators"]
                ]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad validator entry: {exc}") from None
        allowed = {
            "paths": ("store_dir", "chain_path", "keys_dir", "audit_log"),
            "consensus": ("validators", "flag_threshold", "removal_threshold", "min_active"),
            "trust": ("history_weight", "crossval_weight", "window_seconds", "window_meters", "min_trust"),
            "ledger": ("batch_size", "batch_timeout_ms", "clock"),
        }
        for name, keys in allowed.items():
            section = raw.get(name, {})
            stray = set(section) - set(keys)
            if stray:
                raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(stray))}")
            if name in ("consensus", "trust", "ledger"):
                for key in keys:
                    if key in section and key != "validators":
                        setattr(cfg, key, section[key])
        if "rng_seed" in raw:
            cfg.rng_seed = raw["rng_seed"]
        if "signature_scheme" in raw:
            cfg.signature_scheme = raw["signature_scheme"]
        try:
            return cfg.validate()
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found; run `ledgerlane init`") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    def to_toml(self, base_dir: Path | None = None) -> str:
        def rel(p: Path) -> str:
            if base_dir is not None:
                try:
                    return str(p.relative_to(base_dir))
                except ValueError:
                    pass
            return str(p)

        trust: dict[str, Any] = {
            "history_weight": self.history_weight,
            "crossval_weight": self.crossval_weight,
            "window_seconds": self.window_seconds,
            "window_meters": self.window_meters,
        }
        if self.min_trust is not None:
            trust["min_trust"] = self.min_trust
        doc = {
            "rng_seed": self.rng_seed,
            "signature_scheme": self.signature_scheme,
            "paths": {
                "store_dir": rel(self.store_dir),
                "chain_path": rel(self.chain_path),
                "keys_dir": rel(self.keys_dir),
                "audit_log": rel(self.audit_log),
            },
            "consensus": {
                "flag_threshold": self.flag_threshold,
                "removal_threshold": self.removal_threshold,
                "min_active": self.min_active,
                "validators": [
                    {"id": v.id, "behavior": v.behavior.value, "seed": v.seed} for v in self.validators
                ],
            },
            "trust": trust,
            "ledger": {
                "batch_size": self.batch_size,
                "batch_timeout_ms": self.batch_timeout_ms,
                "clock": self.clock,
            },
        }
        return tomli_w.dumps(doc)


def resolve_config_path(explicit: str | os.PathLike | None = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(DEFAULT_CONFIG_NAME)
