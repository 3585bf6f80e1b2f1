"""Database connector: resolves reference pointers to live resources.

Fetches are read-only FHIR REST interactions over HTTP(S) with JSON bodies.
A fetched body is re-hashed and compared to the pointer's digest; a mismatch
is reported, not raised, because source data may legitimately change after a
share — the viewer decides what a stale hash means.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

import httpx

from ..clock import Clock
from ..errors import Expired, FetchFailed
from .pointers import FhirResource, ReferencePointer, resource_data_hash
from .paths import validate_reference_path


class Integrity(str, enum.Enum):
    VERIFIED = "Verified"
    HASH_MISMATCH = "HashMismatch"


@dataclass
class FetchResult:
    resource: FhirResource
    integrity: Integrity


class Connector:
    def __init__(
        self,
        clock: Clock,
        timeout_ms: int = 5000,
        mounts: Optional[dict[str, httpx.BaseTransport]] = None,
    ):
        # mounts route embedded-store base URLs to in-process transports;
        # anything else goes over the network.
        self._clock = clock
        self._client = httpx.Client(
            timeout=timeout_ms / 1000.0,
            mounts=mounts or {},
            follow_redirects=False,
        )

    def close(self) -> None:
        self._client.close()

    def get(self, base_url: str, path: str,
            allowed_types: Optional[Iterable[str]] = None) -> dict:
        """One validated read/search interaction; returns the JSON body."""
        validate_reference_path(path, allowed_types)
        url = f"{base_url.rstrip('/')}/{path}"
        try:
            response = self._client.get(url, headers={"Accept": "application/fhir+json"})
        except httpx.HTTPError as exc:
            raise FetchFailed(f"endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise FetchFailed(f"endpoint returned {response.status_code} for {path}")
        try:
            body = response.json()
        except ValueError as exc:
            raise FetchFailed(f"endpoint returned non-JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise FetchFailed("endpoint returned a non-object body")
        return body

    def fetch(
        self, rp: ReferencePointer, allowed_types: Optional[Iterable[str]] = None
    ) -> FetchResult:
        if rp.is_expired(self._clock.now()):
            raise Expired("reference pointer has expired")
        parsed = validate_reference_path(rp.path, allowed_types)
        body = self.get(rp.base_url, rp.path, allowed_types)

        try:
            if parsed.is_search:
                if body.get("resourceType") != "Bundle":
                    raise FetchFailed("search did not return a Bundle")
                resource = FhirResource(
                    resource_type="Bundle", resource_id=body.get("id", ""), body=body
                )
            else:
                resource = FhirResource.from_body(body)
        except ValueError as exc:
            raise FetchFailed(f"malformed resource body: {exc}") from exc

        integrity = (
            Integrity.VERIFIED
            if resource_data_hash(resource.body) == rp.data_hash
            else Integrity.HASH_MISMATCH
        )
        return FetchResult(resource=resource, integrity=integrity)
