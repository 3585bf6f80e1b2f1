"""Validation of FHIR REST resource paths via regular-expression parsing.

Exactly three shapes are accepted, matching the read, vread, and search
interactions of the FHIR REST API:

    Type/id
    Type/id/_history/vid
    Type?param=value&param=value...

``Type`` must be a known (and configured-allowed) resource type, ids follow
the FHIR id grammar ``[A-Za-z0-9.-]{1,64}``, and search parameter names may
carry a ``:modifier`` suffix.  Everything else — absolute URLs, leading or
trailing slashes, traversal segments, empty or spaced parameters — is
rejected with the position of the first offending character, so callers can
point at the exact violation.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..errors import InvalidPath
from .resource_types import R4_RESOURCE_TYPES

_TYPE_RE = re.compile(r"[A-Za-z]+")
_ID_RE = re.compile(r"^[A-Za-z0-9\-.]{1,64}$")
_PARAM_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9\-_]*(:[A-Za-z0-9\-]+)?$")
_PARAM_VALUE_RE = re.compile(r"^[^&?#\s]+$")
_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*://")


@dataclass(frozen=True)
class ParsedPath:
    resource_type: str
    resource_id: Optional[str] = None
    version_id: Optional[str] = None
    search_params: Optional[tuple[tuple[str, str], ...]] = field(default=None)

    @property
    def is_search(self) -> bool:
        return self.search_params is not None


def validate_reference_path(
    path: str, allowed_types: Optional[Iterable[str]] = None
) -> ParsedPath:
    """Parse ``path`` or raise :class:`InvalidPath` with the first violation."""
    allowed = frozenset(allowed_types) if allowed_types is not None else R4_RESOURCE_TYPES

    if not isinstance(path, str) or not path:
        raise InvalidPath("path is empty", position=0)
    if _SCHEME_RE.match(path):
        raise InvalidPath("absolute URLs are not resource paths", position=0)
    if path[0] == "/":
        raise InvalidPath("path must not start with '/'", position=0)

    m = _TYPE_RE.match(path)
    if not m:
        raise InvalidPath(f"expected a resource type, got {path[0]!r}", position=0)
    resource_type = m.group(0)
    if resource_type not in allowed:
        raise InvalidPath(f"unknown or disallowed resource type {resource_type!r}", position=0)
    rest = path[m.end():]

    if not rest:
        raise InvalidPath("bare resource type: expected '/id' or '?param=value'", position=m.end())

    if rest[0] == "?":
        return ParsedPath(
            resource_type=resource_type,
            search_params=_parse_search(rest[1:], offset=m.end() + 1),
        )

    if rest[0] != "/":
        raise InvalidPath(f"unexpected character {rest[0]!r} after resource type", position=m.end())

    segments = rest[1:].split("/")
    resource_id = segments[0]
    id_pos = m.end() + 1
    _check_id(resource_id, "resource id", id_pos)

    if len(segments) == 1:
        return ParsedPath(resource_type=resource_type, resource_id=resource_id)

    if len(segments) == 3 and segments[1] == "_history":
        vid_pos = id_pos + len(resource_id) + len("/_history/")
        _check_id(segments[2], "version id", vid_pos)
        return ParsedPath(
            resource_type=resource_type, resource_id=resource_id, version_id=segments[2]
        )

    raise InvalidPath(
        "only 'Type/id' and 'Type/id/_history/vid' segment shapes are accepted",
        position=id_pos + len(resource_id),
    )


def _check_id(value: str, what: str, position: int) -> None:
    if not value:
        raise InvalidPath(f"empty {what}", position=position)
    if not _ID_RE.match(value):
        bad = next((i for i, c in enumerate(value) if not re.match(r"[A-Za-z0-9\-.]", c)), 0)
        if len(value) > 64:
            raise InvalidPath(f"{what} longer than 64 characters", position=position)
        raise InvalidPath(f"invalid character in {what}", position=position + bad)
    if set(value) == {"."}:
        # '.' and '..' satisfy the id charset but are traversal segments
        raise InvalidPath(f"{what} must not be a dot segment", position=position)


def _parse_search(query: str, offset: int) -> tuple[tuple[str, str], ...]:
    if not query:
        raise InvalidPath("empty search expression", position=offset)
    params: list[tuple[str, str]] = []
    pos = offset
    for pair in query.split("&"):
        if not pair:
            raise InvalidPath("empty search parameter", position=pos)
        if "=" not in pair:
            raise InvalidPath("search parameter missing '='", position=pos + len(pair))
        name, value = pair.split("=", 1)
        if not _PARAM_NAME_RE.match(name):
            raise InvalidPath(f"invalid search parameter name {name!r}", position=pos)
        if not _PARAM_VALUE_RE.match(value):
            raise InvalidPath(f"invalid search parameter value for {name!r}", position=pos + len(name) + 1)
        params.append((name, value))
        pos += len(pair) + 1
    return tuple(params)
