"""Registry and Access contract state machines.

State is the pure left-fold of ``execute`` over the ledger's transaction
sequence: restart a node, replay the log, and you are guaranteed the same
registry and the same grant table, bit for bit.  Failed calls advance the
replay guard and stay on the ledger with a failure code; they never change
state.

Registry maps directory handles (provider email or phone) to digital health
identities — a public encryption key (the identity itself) plus a public
signing key.  No other personal data is ever stored.  Access maps
(grantee identity, token name) to a grant record holding an authorized flag
and the encrypted token; revoking flips the flag to false and empties the
token in the same state transition.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

from . import crypto, errors
from .canonical import digest_of
from .ledger import TX_FAILED, TX_OK, Transaction

MAX_TOKEN_NAME_BYTES = 128

REGISTER = "register"
ROTATE_KEY = "rotate_key"
GRANT = "grant"
REVOKE = "revoke"
CONSUME = "consume"

_PAYLOAD_FIELDS = {
    ("Registry", REGISTER): ("handle", "encryption_public_key", "signing_public_key", "actor"),
    ("Registry", ROTATE_KEY): ("handle", "encryption_public_key", "signing_public_key", "actor"),
    ("Access", GRANT): ("actor", "grantee", "token_name", "token"),
    ("Access", REVOKE): ("actor", "grantee", "token_name"),
    ("Access", CONSUME): ("actor", "grantee", "grantor", "token_name"),
}


@dataclass(frozen=True)
class DigitalIdentity:
    encryption_public_key: str  # this key IS the identity
    signing_public_key: str
    directory_handle: str
    registered_at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "encryption_public_key": self.encryption_public_key,
            "signing_public_key": self.signing_public_key,
            "directory_handle": self.directory_handle,
            "registered_at": self.registered_at,
        }


@dataclass(frozen=True)
class GrantRecord:
    grantee: str
    token_name: str
    authorized: bool
    token: str  # envelope JSON; empty exactly when revoked
    grantor: str
    updated_at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "grantee": self.grantee,
            "token_name": self.token_name,
            "authorized": self.authorized,
            "token": self.token,
            "grantor": self.grantor,
            "updated_at": self.updated_at,
        }


@dataclass(frozen=True)
class StateDelta:
    kind: str  # Registered | KeyRotated | Granted | Revoked | TokenConsumed
    actor: str
    subject: str
    token_name: str = ""


class MembershipList:
    """Flat allowlist of handles approved to register.

    The file is re-read on every check so the admin CLI can edit it while
    the node runs.  With enforcement off, every handle is approved.
    """

    def __init__(self, path: Optional[str | Path], require: bool = True):
        self._path = Path(path) if path else None
        self._require = require

    @property
    def enforced(self) -> bool:
        return self._require

    def entries(self) -> set[str]:
        if self._path is None or not self._path.exists():
            return set()
        return {
            line.strip()
            for line in self._path.read_text("utf-8").splitlines()
            if line.strip() and not line.strip().startswith("#")
        }

    def allows(self, handle: str) -> bool:
        if not self._require:
            return True
        return handle in self.entries()

    def add(self, handle: str) -> None:
        if self._path is None:
            raise errors.BadConfig("no membership file configured")
        entries = self.entries()
        entries.add(handle)
        self._write(entries)

    def remove(self, handle: str) -> None:
        if self._path is None:
            raise errors.BadConfig("no membership file configured")
        entries = self.entries()
        entries.discard(handle)
        self._write(entries)

    def _write(self, entries: set[str]) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.write_text("".join(f"{e}\n" for e in sorted(entries)), "utf-8")


class ContractEngine:
    """Deterministic executor for both contracts, plus the materialized view
    reads the portal needs.  Writes are sequential in ledger order; reads are
    safe against the live dicts under the single-writer contract."""

    def __init__(self, membership: MembershipList, trusted_senders: Optional[set[str]] = None):
        self._membership = membership
        # the node's own service signing key; allowed to submit on behalf of
        # authenticated users even though it is not a registered provider
        self._trusted_senders = set(trusted_senders or ())
        self._by_handle: dict[str, DigitalIdentity] = {}
        self._by_enc_key: dict[str, DigitalIdentity] = {}
        self._by_sig_key: dict[str, DigitalIdentity] = {}
        self._grants: dict[tuple[str, str], GrantRecord] = {}
        self._applied_sequence = -1
        self._lock = threading.RLock()

    # -- ledger admission hooks ----------------------------------------------

    def check_sender(self, sender: str, contract: str, operation: str) -> None:
        if sender in self._trusted_senders:
            return
        if (contract, operation) == ("Registry", REGISTER):
            return
        if sender not in self._by_sig_key:
            raise errors.UnknownSender("sender is not a registered identity")

    def check_payload(self, contract: str, operation: str, payload: dict) -> None:
        if not isinstance(payload, dict):
            raise errors.MalformedPayload("payload must be an object")
        fields = _PAYLOAD_FIELDS.get((contract, operation))
        if fields is None:
            # unknown operations are admitted and recorded as failures by
            # execute(), preserving the audit trail of the attempt
            return
        for name in fields:
            if not isinstance(payload.get(name), str):
                raise errors.MalformedPayload(f"payload field {name!r} missing or not a string")
        extra = set(payload) - set(fields)
        if extra:
            raise errors.MalformedPayload(f"unexpected payload fields: {sorted(extra)}")

    def execute(self, tx: Transaction) -> tuple[str, Optional[str], Optional[StateDelta]]:
        """Apply one admitted transaction; returns (status, error_code, delta).

        Contract-level failures are part of the audit trail, so they are
        reported rather than raised; the replay guard advances either way.
        """
        with self._lock:
            if tx.sequence <= self._applied_sequence:
                raise errors.ReplayRejected(
                    f"sequence {tx.sequence} already applied (at {self._applied_sequence})"
                )
            self._applied_sequence = tx.sequence
            try:
                delta = self._dispatch(tx)
                return TX_OK, None, delta
            except errors.NodeError as exc:
                return TX_FAILED, exc.code, None

    def replay(self, tx: Transaction) -> Optional[StateDelta]:
        """Re-execute a sealed transaction during startup rebuild and verify
        the recorded outcome still holds — a cheap determinism check."""
        status, error_code, delta = self.execute(tx)
        if status != tx.status or (tx.status == TX_FAILED and error_code != tx.error):
            raise errors.LedgerCorrupt(
                f"replay of sequence {tx.sequence} produced {status}/{error_code}, "
                f"ledger records {tx.status}/{tx.error}"
            )
        return delta

    def _dispatch(self, tx: Transaction) -> StateDelta:
        op = (tx.contract, tx.operation)
        if op == ("Registry", REGISTER):
            return self._register(tx)
        if op == ("Registry", ROTATE_KEY):
            return self._rotate_key(tx)
        if op == ("Access", GRANT):
            return self._grant(tx)
        if op == ("Access", REVOKE):
            return self._revoke(tx)
        if op == ("Access", CONSUME):
            return self._consume(tx)
        raise errors.UnknownOperation(f"{tx.contract}.{tx.operation}")

    # -- Registry ----------------------------------------------------------

    def _register(self, tx: Transaction) -> StateDelta:
        p = tx.payload
        handle, enc_key, sig_key = p["handle"], p["encryption_public_key"], p["signing_public_key"]
        if not handle:
            raise errors.MalformedPayload("handle must be non-empty")
        crypto.load_public_key(enc_key)  # MalformedKey if not a P-256 key
        crypto.load_public_key(sig_key)
        if handle in self._by_handle:
            raise errors.DuplicateHandle(f"handle already registered: {handle}")
        if enc_key in self._by_enc_key or sig_key in self._by_sig_key:
            raise errors.DuplicateHandle("public key already registered to another handle")
        if not self._membership.allows(handle):
            raise errors.NotCertified(f"handle not on the membership list: {handle}")
        identity = DigitalIdentity(
            encryption_public_key=enc_key,
            signing_public_key=sig_key,
            directory_handle=handle,
            registered_at=tx.timestamp,
        )
        self._by_handle[handle] = identity
        self._by_enc_key[enc_key] = identity
        self._by_sig_key[sig_key] = identity
        return StateDelta(kind="Registered", actor=enc_key, subject=enc_key)

    def _rotate_key(self, tx: Transaction) -> StateDelta:
        p = tx.payload
        handle, enc_key, sig_key = p["handle"], p["encryption_public_key"], p["signing_public_key"]
        old = self._by_handle.get(handle)
        if old is None:
            raise errors.UnknownHandle(f"no identity registered for {handle}")
        crypto.load_public_key(enc_key)
        crypto.load_public_key(sig_key)
        taken_enc = self._by_enc_key.get(enc_key)
        taken_sig = self._by_sig_key.get(sig_key)
        if (taken_enc and taken_enc.directory_handle != handle) or (
            taken_sig and taken_sig.directory_handle != handle
        ):
            raise errors.DuplicateHandle("new key already registered to another handle")
        del self._by_enc_key[old.encryption_public_key]
        del self._by_sig_key[old.signing_public_key]
        identity = DigitalIdentity(
            encryption_public_key=enc_key,
            signing_public_key=sig_key,
            directory_handle=handle,
            registered_at=tx.timestamp,
        )
        self._by_handle[handle] = identity
        self._by_enc_key[enc_key] = identity
        self._by_sig_key[sig_key] = identity
        return StateDelta(kind="KeyRotated", actor=enc_key, subject=old.encryption_public_key)

    # -- Access --------------------------------------------------------------

    def _grant(self, tx: Transaction) -> StateDelta:
        p = tx.payload
        grantor, grantee, token_name, token = p["actor"], p["grantee"], p["token_name"], p["token"]
        if grantor not in self._by_enc_key:
            raise errors.UnknownGrantor("grantor is not a registered identity")
        if grantee not in self._by_enc_key:
            raise errors.UnknownGrantee("grantee is not a registered identity")
        if not token:
            raise errors.EmptyToken("token must be non-empty")
        if not token_name:
            raise errors.InvalidTokenName("token_name must be non-empty")
        if len(token_name.encode("utf-8")) > MAX_TOKEN_NAME_BYTES:
            raise errors.InvalidTokenName(f"token_name exceeds {MAX_TOKEN_NAME_BYTES} bytes")
        try:
            sender_hint = json.loads(token).get("sender_hint")
        except (json.JSONDecodeError, AttributeError, TypeError) as exc:
            raise errors.EmptyToken(f"token is not a valid envelope: {exc}") from exc
        if sender_hint != grantor:
            # a received token cannot be re-shared under someone else's name
            raise errors.TokenSenderMismatch("token was not created by the grantor")
        existing = self._grants.get((grantee, token_name))
        if existing is not None and existing.grantor != grantor:
            raise errors.TokenNameTaken(
                "token_name already used for this grantee by a different grantor"
            )
        self._grants[(grantee, token_name)] = GrantRecord(
            grantee=grantee,
            token_name=token_name,
            authorized=True,
            token=token,
            grantor=grantor,
            updated_at=tx.timestamp,
        )
        return StateDelta(kind="Granted", actor=grantor, subject=grantee, token_name=token_name)

    def _revoke(self, tx: Transaction) -> StateDelta:
        p = tx.payload
        grantor, grantee, token_name = p["actor"], p["grantee"], p["token_name"]
        record = self._grants.get((grantee, token_name))
        if record is None or not record.authorized:
            raise errors.NoSuchGrant(f"no active grant {token_name!r} for this grantee")
        if record.grantor != grantor:
            raise errors.NotGrantor("only the original grantor may revoke")
        self._grants[(grantee, token_name)] = replace(
            record, authorized=False, token="", updated_at=tx.timestamp
        )
        return StateDelta(kind="Revoked", actor=grantor, subject=grantee, token_name=token_name)

    def _consume(self, tx: Transaction) -> StateDelta:
        p = tx.payload
        consumer, grantee, token_name = p["actor"], p["grantee"], p["token_name"]
        record = self._grants.get((grantee, token_name))
        if record is None:
            raise errors.NoSuchGrant(f"no grant {token_name!r} for this grantee")
        if consumer != grantee:
            raise errors.NotGrantor("only the grantee may consume a token")
        if not record.authorized:
            raise errors.RevokedAccess("grant has been revoked")
        if p["grantor"] != record.grantor:
            raise errors.MalformedPayload("consume references the wrong grantor")
        return StateDelta(
            kind="TokenConsumed", actor=consumer, subject=record.grantor, token_name=token_name
        )

    # -- reads -----------------------------------------------------------------

    def registry_lookup(self, query: str) -> DigitalIdentity:
        identity = self._by_handle.get(query) or self._by_enc_key.get(query)
        if identity is None:
            raise errors.NotFound(f"no identity for {query!r}")
        return identity

    def lookup_by_signing_key(self, signing_key: str) -> Optional[DigitalIdentity]:
        return self._by_sig_key.get(signing_key)

    def is_registered(self, query: str) -> bool:
        return query in self._by_handle or query in self._by_enc_key

    def access_get_token(self, grantee: str, token_name: str) -> GrantRecord:
        record = self._grants.get((grantee, token_name))
        if record is None:
            raise errors.NoSuchGrant(f"no grant {token_name!r} for this grantee")
        return record

    def access_list_for(self, identity: str) -> dict[str, list[GrantRecord]]:
        if identity not in self._by_enc_key:
            raise errors.UnknownIdentity("identity not registered")

        def order(record: GrantRecord) -> tuple[int, str]:
            return (record.updated_at, record.token_name)

        return {
            "granted_to_me": sorted(
                (r for r in self._grants.values() if r.grantee == identity), key=order
            ),
            "granted_by_me": sorted(
                (r for r in self._grants.values() if r.grantor == identity), key=order
            ),
        }

    def identities(self) -> list[DigitalIdentity]:
        return sorted(self._by_handle.values(), key=lambda i: i.directory_handle)

    @property
    def applied_sequence(self) -> int:
        return self._applied_sequence

    # -- state comparison ---------------------------------------------------

    def export_state(self) -> dict[str, Any]:
        """Full materialized state in a stable shape, for restart comparison."""
        return {
            "identities": {h: i.to_dict() for h, i in sorted(self._by_handle.items())},
            "grants": {
                f"{g}::{n}": r.to_dict() for (g, n), r in sorted(self._grants.items())
            },
            "applied_sequence": self._applied_sequence,
        }

    def state_fingerprint(self) -> str:
        return digest_of(self.export_state())
