"""Independent reference fold used to cross-check contract state.

Deliberately naive and separate from the production engine: walks the
transaction log once, applying plain-dict updates for each successful
operation.  If the engine and this fold ever disagree, one of them is wrong.
"""
from __future__ import annotations

from typing import Iterable


def reference_fold(transactions: Iterable) -> dict:
    identities: dict[str, dict] = {}
    grants: dict[str, dict] = {}
    applied = -1
    for tx in transactions:
        applied = tx.sequence
        if tx.status != "ok":
            continue
        p = tx.payload
        op = (tx.contract, tx.operation)
        if op == ("Registry", "register"):
            identities[p["handle"]] = {
                "encryption_public_key": p["encryption_public_key"],
                "signing_public_key": p["signing_public_key"],
                "directory_handle": p["handle"],
                "registered_at": tx.timestamp,
            }
        elif op == ("Registry", "rotate_key"):
            identities[p["handle"]] = {
                "encryption_public_key": p["encryption_public_key"],
                "signing_public_key": p["signing_public_key"],
                "directory_handle": p["handle"],
                "registered_at": tx.timestamp,
            }
        elif op == ("Access", "grant"):
            grants[f"{p['grantee']}::{p['token_name']}"] = {
                "grantee": p["grantee"],
                "token_name": p["token_name"],
                "authorized": True,
                "token": p["token"],
                "grantor": p["actor"],
                "updated_at": tx.timestamp,
            }
        elif op == ("Access", "revoke"):
            record = grants[f"{p['grantee']}::{p['token_name']}"]
            record.update(authorized=False, token="", updated_at=tx.timestamp)
        elif op == ("Access", "consume"):
            pass  # reads do not change state
    return {
        "identities": dict(sorted(identities.items())),
        "grants": dict(sorted(grants.items())),
        "applied_sequence": applied,
    }
