"""Canonical serialization and digest primitives.

Every signature and every hash in the system is computed over the canonical
form produced here: key-sorted, whitespace-free JSON encoded as UTF-8, with
binary values carried as unpadded base64url strings.  Two independent nodes
(or a browser client) serializing the same object must produce identical
bytes, otherwise chain validation and token verification break.
"""
from __future__ import annotations

import base64
import binascii
import hashlib
import json
from typing import Any

# One fixed 256-bit digest everywhere: blocks, tx roots, resource integrity.
DIGEST_HEX_LEN = 64
ZERO_DIGEST = "0" * DIGEST_HEX_LEN


def canonical_bytes(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    """Hex digest of an object's canonical serialization."""
    return sha256_hex(canonical_bytes(obj))


def b64u_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64u_decode(text: str) -> bytes:
    """Decode unpadded base64url; raises ValueError on malformed input."""
    if not isinstance(text, str):
        raise ValueError("base64url value must be a string")
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64url data: {exc}") from exc
