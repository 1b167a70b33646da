from __future__ import annotations

import json
from pathlib import Path

import pytest

from ledgerlane.config import RunConfig, ValidatorSpec, default_validators
from ledgerlane.identity import ED25519, KeyPair, Role
from ledgerlane.node import Node
from ledgerlane.validation import SubmissionEnvelope

# Sample detection record, whitespace as published.
SAMPLE_TEXT = """{
  "label": "truck",
  "confidence": 0.41042160987854004,
  "bounding_box":{ "x1":755, "y1":82, "x2":1023, "y2":506 },
  "timestamp": "2024-07-10T05:55:46.304199Z",
  "color": "yellow",
  "location": { "latitude": 40.712303728004414, "longitude": -74.00629823104597 }
}"""

ADMIN = "admin-1"
TRUSTED = "cam-07"
UNTRUSTED = "drone-3"


def sample() -> dict:
    return json.loads(SAMPLE_TEXT)


def record(**changes) -> dict:
    """Sample record with overrides; nested keys use ``__`` (``location__latitude``)."""
    doc = sample()
    for key, value in changes.items():
        target = doc
        *path, last = key.split("__")
        for part in path:
            target = target[part]
        target[last] = value
    return doc


def key_for(principal_id: str, scheme=None) -> KeyPair:
    return KeyPair.derive(principal_id, 7, scheme or ED25519)


def make_config(tmp_path: Path, validators=None, **overrides) -> RunConfig:
    config = RunConfig(
        store_dir=tmp_path / "store",
        chain_path=tmp_path / "chain.log",
        keys_dir=tmp_path / "keys",
        audit_log=tmp_path / "rounds.jsonl",
        validators=validators if validators is not None else default_validators(),
        clock="logical",
        rng_seed=11,
    )
    for name, value in overrides.items():
        setattr(config, name, value)
    return config.validate()


def bootstrap(node: Node) -> Node:
    scheme = node.scheme
    node.bootstrap(ADMIN, key_for(ADMIN, scheme))
    node.register_as(ADMIN, key_for(ADMIN, scheme), TRUSTED, Role.TRUSTED_SOURCE, key_for(TRUSTED, scheme).public_key)
    node.register_as(ADMIN, key_for(ADMIN, scheme), UNTRUSTED, Role.UNTRUSTED_SOURCE,
                     key_for(UNTRUSTED, scheme).public_key)
    return node


def envelope(node: Node, source: str = TRUSTED, data: bytes = b"frame-bytes", metadata=None) -> SubmissionEnvelope:
    return SubmissionEnvelope.build(data, sample() if metadata is None else metadata, source,
                                    key_for(source, node.scheme))


@pytest.fixture
def mem_node() -> Node:
    """In-memory node, bootstrapped with one admin and one source of each kind."""
    config = RunConfig(clock="logical", rng_seed=11)
    return bootstrap(Node.in_memory_node(config))


@pytest.fixture
def disk_node(tmp_path) -> Node:
    node = bootstrap(Node(make_config(tmp_path)))
    yield node
    node.close()


@pytest.fixture
def node_factory(tmp_path):
    def factory(validators=None, bootstrapped=True, in_memory=True, **overrides) -> Node:
        config = make_config(tmp_path, validators, **overrides)
        node = Node(config, in_memory=in_memory)
        return bootstrap(node) if bootstrapped else node

    return factory


def specs(*behaviors) -> list[ValidatorSpec]:
    return [ValidatorSpec(f"validator-{i}", b) for i, b in enumerate(behaviors, start=1)]
