"""Reference pointers: the only data-derived artifact that ever reaches the
ledger, and even then only inside an encrypted envelope.

A pointer locates an off-chain resource (endpoint + path), fixes its content
with a digest of the canonical resource body, and optionally expires.  Its
serialized size is independent of the referenced resource's size — sharing a
10 MB report costs the same on-chain bytes as sharing a 1 KB note.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from ..canonical import DIGEST_HEX_LEN, canonical_bytes, sha256_hex
from ..errors import MalformedPointer
from .paths import validate_reference_path

_HEX_DIGITS = set("0123456789abcdef")


@dataclass(frozen=True)
class FhirResource:
    resource_type: str
    resource_id: str
    body: dict

    def __post_init__(self):
        if self.body.get("resourceType") != self.resource_type:
            raise ValueError("body.resourceType does not match resource_type")
        # search-result bundles have no id; everything else must agree
        if "id" in self.body:
            if self.body["id"] != self.resource_id:
                raise ValueError("body.id does not match resource_id")
        elif self.resource_id:
            raise ValueError("resource_id set but body has no id")

    @classmethod
    def from_body(cls, body: dict) -> "FhirResource":
        return cls(
            resource_type=body.get("resourceType", ""),
            resource_id=body.get("id", ""),
            body=body,
        )


def canonical_resource_bytes(body: dict) -> bytes:
    """Stable serialization of a resource body; FHIR servers are free to
    reorder JSON keys, so hashing must not depend on their order."""
    return canonical_bytes(body)


def resource_data_hash(body: dict) -> str:
    return sha256_hex(canonical_resource_bytes(body))


@dataclass(frozen=True)
class ReferencePointer:
    base_url: str
    path: str
    data_hash: str
    created_by: str  # grantor's public encryption key
    expires_at: Optional[int] = None

    def __post_init__(self):
        if not self.base_url or not isinstance(self.base_url, str):
            raise MalformedPointer("base_url is required")
        if not self.path or not isinstance(self.path, str):
            raise MalformedPointer("path is required")
        if (
            not isinstance(self.data_hash, str)
            or len(self.data_hash) != DIGEST_HEX_LEN
            or not set(self.data_hash) <= _HEX_DIGITS
        ):
            raise MalformedPointer(f"data_hash must be {DIGEST_HEX_LEN} lowercase hex chars")
        if not self.created_by or not isinstance(self.created_by, str):
            raise MalformedPointer("created_by is required")
        if self.expires_at is not None and not isinstance(self.expires_at, int):
            raise MalformedPointer("expires_at must be UTC seconds")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "base_url": self.base_url,
            "path": self.path,
            "data_hash": self.data_hash,
            "created_by": self.created_by,
        }
        if self.expires_at is not None:
            d["expires_at"] = self.expires_at
        return d

    def to_canonical_bytes(self) -> bytes:
        return canonical_bytes(self.to_dict())

    def digest(self) -> str:
        return sha256_hex(self.to_canonical_bytes())

    @classmethod
    def from_dict(cls, data: Any) -> "ReferencePointer":
        if not isinstance(data, dict):
            raise MalformedPointer("pointer must be an object")
        unknown = set(data) - {"base_url", "path", "data_hash", "created_by", "expires_at"}
        if unknown:
            raise MalformedPointer(f"unknown pointer fields: {sorted(unknown)}")
        try:
            return cls(
                base_url=data["base_url"],
                path=data["path"],
                data_hash=data["data_hash"],
                created_by=data["created_by"],
                expires_at=data.get("expires_at"),
            )
        except KeyError as exc:
            raise MalformedPointer(f"pointer missing field {exc.args[0]!r}") from exc

    def is_expired(self, now: int) -> bool:
        return self.expires_at is not None and now >= self.expires_at


def make_reference_pointer(
    base_url: str,
    path: str,
    resource_body: dict,
    created_by: str,
    expires_at: Optional[int] = None,
    allowed_types=None,
    now: Optional[int] = None,
) -> ReferencePointer:
    """Build a pointer for a resource already fetched from (base_url, path)."""
    validate_reference_path(path, allowed_types)
    if expires_at is not None and now is not None and expires_at <= now:
        raise MalformedPointer("expires_at must be in the future")
    return ReferencePointer(
        base_url=base_url.rstrip("/"),
        path=path,
        data_hash=resource_data_hash(resource_body),
        created_by=created_by,
        expires_at=expires_at,
    )
