from __future__ import annotations

import pytest

from careledger import crypto
from careledger.clock import ManualClock
from careledger.config import NodeConfig
from careledger.node import Node

ALICE = "alice@clinic.example"
BOB = "bob@remote.example"
CAROL = "carol@lab.example"


@pytest.fixture
def clock():
    return ManualClock(start=1_750_000_000)


@pytest.fixture
def alice_keys():
    return crypto.generate_key_material()


@pytest.fixture
def bob_keys():
    return crypto.generate_key_material()


@pytest.fixture
def carol_keys():
    return crypto.generate_key_material()


@pytest.fixture
def membership_file(tmp_path):
    path = tmp_path / "membership.txt"
    path.write_text(f"{ALICE}\n{BOB}\n{CAROL}\n", "utf-8")
    return path


@pytest.fixture
def node_config(tmp_path, membership_file):
    return NodeConfig(
        data_dir=str(tmp_path / "data"),
        membership_file=str(membership_file),
    )


@pytest.fixture
def node(node_config, clock):
    running = Node(node_config, clock=clock)
    yield running
    running.close()


def register(node: Node, handle: str, keys: crypto.KeyMaterial):
    return node.register(handle, keys.encryption_public_b64, keys.signing_public_b64)


@pytest.fixture
def populated_node(node, alice_keys, bob_keys, carol_keys):
    """Node with Alice, Bob, and Carol registered."""
    register(node, ALICE, alice_keys)
    register(node, BOB, bob_keys)
    register(node, CAROL, carol_keys)
    return node
