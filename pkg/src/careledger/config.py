"""Node configuration: JSON file, environment override for the path."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import errors

CONFIG_ENV_VAR = "CARELEDGER_CONFIG"

# base URL the default embedded store is addressed by; never hits a socket
EMBEDDED_BASE_URL = "mock://oncology/fhir"


@dataclass
class StoreConfig:
    name: str
    base_url: str
    fixture: Optional[str] = None  # present for embedded stores


@dataclass
class NodeConfig:
    data_dir: str
    host: str = "127.0.0.1"
    port: int = 8480
    membership_file: Optional[str] = None
    require_membership: bool = True
    block_size: int = 1
    session_ttl_seconds: int = 1800
    challenge_ttl_seconds: int = 120
    fhir_allowed_types: Optional[list[str]] = None
    fhir_timeout_ms: int = 5000
    stores: list[StoreConfig] = field(default_factory=list)
    ui_dir: Optional[str] = None

    def __post_init__(self):
        if not self.data_dir:
            raise errors.BadConfig("data_dir is required")
        if not self.stores:
            self.stores = [
                StoreConfig(
                    name="oncology",
                    base_url=EMBEDDED_BASE_URL,
                    fixture=str(default_fixture_path()),
                )
            ]
        if self.membership_file is None:
            self.membership_file = str(Path(self.data_dir) / "membership.txt")

    @property
    def default_store(self) -> StoreConfig:
        return self.stores[0]

    def store(self, name: Optional[str]) -> StoreConfig:
        if name is None:
            return self.default_store
        for s in self.stores:
            if s.name == name:
                return s
        raise errors.BadConfig(f"no FHIR store named {name!r}")


def default_fixture_path() -> Path:
    return Path(__file__).parent / "fixtures" / "oncology.json"


def load_config(path: Optional[str | Path] = None) -> NodeConfig:
    """Load config from ``path``, falling back to the env var override."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        raise errors.BadConfig(f"no config path given and {CONFIG_ENV_VAR} unset")
    path = Path(path)
    if not path.exists():
        raise errors.BadConfig(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise errors.BadConfig(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise errors.BadConfig("config must be a JSON object")

    stores = [
        StoreConfig(
            name=s["name"],
            base_url=s["base_url"].rstrip("/"),
            fixture=s.get("fixture"),
        )
        for s in raw.pop("stores", [])
    ]
    known = {
        "data_dir", "host", "port", "membership_file", "require_membership",
        "block_size", "session_ttl_seconds", "challenge_ttl_seconds",
        "fhir_allowed_types", "fhir_timeout_ms", "ui_dir",
    }
    unknown = set(raw) - known
    if unknown:
        raise errors.BadConfig(f"unknown config keys: {sorted(unknown)}")
    try:
        return NodeConfig(stores=stores, **raw)
    except TypeError as exc:
        raise errors.BadConfig(f"bad config: {exc}") from exc
