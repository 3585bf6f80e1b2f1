"""Embedded FHIR store for development and tests.

Serves fixture resources through the same read/search path grammar the
validator enforces.  The store is addressed via an httpx transport, so the
connector exercises real HTTP request/response semantics without a network
socket, and fixtures can be mutated through test hooks to simulate source
data changing after a share.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

import httpx

from ..errors import BadFixture
from .paths import ParsedPath, validate_reference_path


class MockFhirStore:
    def __init__(self, resources: Optional[Iterable[dict]] = None):
        self._resources: list[dict] = []
        self._index: dict[tuple[str, str], dict] = {}
        for body in resources or []:
            self.put(body)

    # -- loading ------------------------------------------------------------

    @classmethod
    def load(cls, fixture_path: str | Path) -> "MockFhirStore":
        """Load a fixture file: either a JSON list of resources, an object
        with a ``resources`` list, or a FHIR Bundle."""
        path = Path(fixture_path)
        if not path.exists():
            raise BadFixture(f"fixture file not found: {path}")
        try:
            doc = json.loads(path.read_text("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BadFixture(f"fixture is not valid JSON: {exc}") from exc
        if isinstance(doc, list):
            resources = doc
        elif isinstance(doc, dict) and isinstance(doc.get("resources"), list):
            resources = doc["resources"]
        elif isinstance(doc, dict) and doc.get("resourceType") == "Bundle":
            resources = [e.get("resource") for e in doc.get("entry", [])]
        else:
            raise BadFixture("fixture must be a list of resources, {resources: []}, or a Bundle")
        store = cls()
        for body in resources:
            if not isinstance(body, dict) or not body.get("resourceType") or not body.get("id"):
                raise BadFixture("every fixture resource needs resourceType and id")
            store.put(body)
        return store

    def put(self, body: dict) -> None:
        key = (body["resourceType"], body["id"])
        if key in self._index:
            self._resources = [r for r in self._resources if (r["resourceType"], r["id"]) != key]
        self._index[key] = body
        self._resources.append(body)

    def delete(self, resource_type: str, resource_id: str) -> None:
        self._index.pop((resource_type, resource_id), None)
        self._resources = [
            r for r in self._resources
            if (r["resourceType"], r["id"]) != (resource_type, resource_id)
        ]

    def all_resources(self) -> list[dict]:
        return list(self._resources)

    # -- read / search ------------------------------------------------------

    def read(self, resource_type: str, resource_id: str) -> Optional[dict]:
        return self._index.get((resource_type, resource_id))

    def search(self, resource_type: str, params: Iterable[tuple[str, str]]) -> dict:
        matches = [
            r for r in self._resources
            if r["resourceType"] == resource_type
            and all(self._matches(r, name, value) for name, value in params)
        ]
        return {
            "resourceType": "Bundle",
            "type": "searchset",
            "total": len(matches),
            "entry": [{"resource": r} for r in matches],
        }

    @staticmethod
    def _matches(resource: dict, name: str, value: str) -> bool:
        name = name.split(":", 1)[0]
        if name == "_id":
            return resource.get("id") == value
        if name in ("patient", "subject"):
            ref = resource.get("subject") or resource.get("patient") or {}
            reference = ref.get("reference", "") if isinstance(ref, dict) else ""
            return reference == value or reference == f"Patient/{value}"
        if name in ("category", "code"):
            concepts = resource.get(name)
            if concepts is None:
                return False
            if isinstance(concepts, dict):
                concepts = [concepts]
            for concept in concepts:
                for coding in concept.get("coding", []):
                    if coding.get("code") == value:
                        return True
            return False
        field = resource.get(name)
        return isinstance(field, (str, int, bool)) and str(field) == value

    # -- request handling ---------------------------------------------------

    def handle(self, parsed: ParsedPath) -> tuple[int, dict]:
        if parsed.is_search:
            return 200, self.search(parsed.resource_type, parsed.search_params or ())
        body = self.read(parsed.resource_type, parsed.resource_id or "")
        if body is None:
            return 404, {
                "resourceType": "OperationOutcome",
                "issue": [{"severity": "error", "code": "not-found"}],
            }
        return 200, body

    def transport(self, base_url: str) -> httpx.MockTransport:
        """An httpx transport serving this store for URLs under base_url.

        The query string is decoded before validation so that transport-level
        percent-encoding (httpx encodes '|' and similar) does not change what
        the store matches against.
        """
        base = httpx.URL(base_url.rstrip("/") + "/")

        def handler(request: httpx.Request) -> httpx.Response:
            if request.url.host != base.host or not request.url.path.startswith(base.path):
                return httpx.Response(404, json={"error": "unknown base"})
            path = request.url.path[len(base.path):]
            pairs = httpx.QueryParams(request.url.query).multi_items()
            if pairs:
                path = path + "?" + "&".join(f"{k}={v}" for k, v in pairs)
            try:
                parsed = validate_reference_path(path)
            except Exception:
                return httpx.Response(400, json={"error": "invalid path"})
            status, body = self.handle(parsed)
            return httpx.Response(status, json=body)

        return httpx.MockTransport(handler)
