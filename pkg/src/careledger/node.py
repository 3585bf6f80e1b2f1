"""The data-sharing node: one place that wires the ledger, the contract
engine, the crypto envelope, and the FHIR connector together.

All mutating operations funnel through here, signed onto the ledger by the
node's service key with the acting user recorded in the payload.  Users
never hand the node long-lived private keys: challenge signatures and
(in client-side mode) token creation and opening happen on the client, and
the request-time key fallback exists only for headless use over TLS.

Startup refuses a ledger file that fails hash-chain validation, then
rebuilds contract state by replaying every sealed transaction, verifying
that each recorded outcome reproduces exactly.
"""
from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import httpx

from . import contracts, crypto, errors
from .clock import Clock, SystemClock
from .config import NodeConfig, StoreConfig
from .contracts import ContractEngine, DigitalIdentity, GrantRecord, MembershipList
from .fhir import (
    Connector,
    MockFhirStore,
    ReferencePointer,
    make_reference_pointer,
    resource_data_hash,
    validate_reference_path,
)
from .ledger import Ledger, QueryFilter, Transaction, identities_in

EVENT_KINDS = {
    ("Registry", contracts.REGISTER): "Registered",
    ("Registry", contracts.ROTATE_KEY): "KeyRotated",
    ("Access", contracts.GRANT): "Granted",
    ("Access", contracts.REVOKE): "Revoked",
    ("Access", contracts.CONSUME): "TokenConsumed",
}


@dataclass(frozen=True)
class Session:
    session_token: str
    identity: str  # encryption public key
    issued_at: int
    expires_at: int


@dataclass(frozen=True)
class SharingEvent:
    kind: str
    actor: str
    subject: str
    token_name: str
    sequence: int
    at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "actor": self.actor,
            "subject": self.subject,
            "token_name": self.token_name,
            "sequence": self.sequence,
            "at": self.at,
        }


class Node:
    def __init__(self, config: NodeConfig, clock: Optional[Clock] = None):
        self.config = config
        self.clock = clock or SystemClock()
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

        self._service_key = self._load_or_create_service_key()
        self.admin_token = self._load_or_create_admin_token()

        self.membership = MembershipList(config.membership_file, require=config.require_membership)
        self.engine = ContractEngine(
            self.membership,
            trusted_senders={crypto.encode_public_key(self._service_key.public_key())},
        )

        ledger_path = self.data_dir / "ledger.jsonl"
        self.ledger = Ledger(ledger_path, self.engine, self.clock, block_size=config.block_size)

        self._events: list[SharingEvent] = []
        self._events_cond = threading.Condition()
        for tx in self.ledger.all_transactions():
            self.engine.replay(tx)
            self._record_event(tx)
        self.ledger.on_admit(self._record_event)

        self.stores: dict[str, MockFhirStore] = {}
        mounts: dict[str, httpx.BaseTransport] = {}
        for sc in config.stores:
            if sc.fixture:
                store = MockFhirStore.load(sc.fixture)
                self.stores[sc.name] = store
                mounts[sc.base_url] = store.transport(sc.base_url)
        self.connector = Connector(self.clock, timeout_ms=config.fhir_timeout_ms, mounts=mounts)

        self.challenges = crypto.ChallengeStore(self.clock, ttl_seconds=config.challenge_ttl_seconds)
        self._sessions: dict[str, Session] = {}

    # -- service identity -----------------------------------------------------

    def _load_or_create_service_key(self):
        key_path = self.data_dir / "node_key.json"
        if key_path.exists():
            data = json.loads(key_path.read_text("utf-8"))
            return crypto.load_private_key(data["signing_private_key"])
        key = crypto.generate_key_material().signing_private
        key_path.write_text(
            json.dumps({"signing_private_key": crypto.encode_private_key(key)}), "utf-8"
        )
        key_path.chmod(0o600)
        return key

    def _load_or_create_admin_token(self) -> str:
        token_path = self.data_dir / "admin_token"
        if token_path.exists():
            return token_path.read_text("utf-8").strip()
        token = secrets.token_hex(24)
        token_path.write_text(token + "\n", "utf-8")
        token_path.chmod(0o600)
        return token

    @property
    def service_sender(self) -> str:
        return crypto.encode_public_key(self._service_key.public_key())

    def _submit(self, contract: str, operation: str, payload: dict) -> Transaction:
        tx = self.ledger.submit(
            contract,
            operation,
            payload,
            sender=self.service_sender,
            signer=lambda data: crypto.sign(self._service_key, data),
        )
        if tx.status != "ok":
            raise errors.by_code(tx.error or "Internal")(
                f"{contract}.{operation} failed: {tx.error}"
            )
        return tx

    def _record_event(self, tx: Transaction) -> None:
        if tx.status != "ok":
            return
        kind = EVENT_KINDS.get((tx.contract, tx.operation))
        if kind is None:
            return
        p = tx.payload
        if tx.operation == contracts.CONSUME:
            subject = p.get("grantor", "")
        elif tx.operation in (contracts.REGISTER, contracts.ROTATE_KEY):
            subject = p.get("encryption_public_key", "")
        else:
            subject = p.get("grantee", "")
        actor = p.get("actor", "") or p.get("encryption_public_key", "")
        event = SharingEvent(
            kind=kind,
            actor=actor,
            subject=subject,
            token_name=p.get("token_name", ""),
            sequence=tx.sequence,
            at=tx.timestamp,
        )
        with self._events_cond:
            self._events.append(event)
            self._events_cond.notify_all()

    # -- registration and authentication ---------------------------------------

    def register(self, handle: str, encryption_public_key: str, signing_public_key: str) -> Transaction:
        crypto.load_public_key(encryption_public_key)
        crypto.load_public_key(signing_public_key)
        return self._submit(
            "Registry",
            contracts.REGISTER,
            {
                "handle": handle,
                "encryption_public_key": encryption_public_key,
                "signing_public_key": signing_public_key,
                "actor": encryption_public_key,
            },
        )

    def rotate_key(self, handle: str, encryption_public_key: str, signing_public_key: str) -> Transaction:
        crypto.load_public_key(encryption_public_key)
        crypto.load_public_key(signing_public_key)
        return self._submit(
            "Registry",
            contracts.ROTATE_KEY,
            {
                "handle": handle,
                "encryption_public_key": encryption_public_key,
                "signing_public_key": signing_public_key,
                "actor": encryption_public_key,
            },
        )

    def make_challenge(self) -> crypto.Challenge:
        return self.challenges.make_challenge()

    def login(self, handle: str, nonce: str, signature_b64: str) -> Session:
        try:
            identity = self.engine.registry_lookup(handle)
        except errors.NotFound as exc:
            raise errors.UnknownHandle(f"handle not registered: {handle}") from exc
        status = self.challenges.peek(nonce)
        if status != "live":
            raise errors.ExpiredChallenge(f"challenge is {status}")
        ok = self.challenges.verify_challenge_response(
            nonce, signature_b64, identity.signing_public_key
        )
        if not ok:
            raise errors.BadSignature("challenge signature does not verify")
        now = self.clock.now()
        session = Session(
            session_token=secrets.token_urlsafe(32),
            identity=identity.encryption_public_key,
            issued_at=now,
            expires_at=now + self.config.session_ttl_seconds,
        )
        self._sessions[session.session_token] = session
        return session

    def authenticate(self, session_token: Optional[str]) -> str:
        """Map a bearer token to the caller's identity key or raise."""
        if not session_token:
            raise errors.Unauthorized("missing session token")
        session = self._sessions.get(session_token)
        if session is None:
            raise errors.Unauthorized("unknown session")
        if self.clock.now() >= session.expires_at:
            del self._sessions[session.session_token]
            raise errors.Unauthorized("session expired")
        return session.identity

    def logout(self, session_token: str) -> None:
        self._sessions.pop(session_token, None)

    def check_admin(self, token: Optional[str]) -> None:
        if not token or not secrets.compare_digest(token, self.admin_token):
            raise errors.AdminRequired("admin token required")

    # -- identity reads ----------------------------------------------------------

    def identity_for(self, query: str) -> DigitalIdentity:
        return self.engine.registry_lookup(query)

    def handle_for(self, identity_key: str) -> str:
        try:
            return self.engine.registry_lookup(identity_key).directory_handle
        except errors.NotFound:
            return ""

    # -- sharing -------------------------------------------------------------------

    def _fetch_for_share(self, store: StoreConfig, fhir_path: str) -> dict:
        parsed = validate_reference_path(fhir_path, self.config.fhir_allowed_types)
        body = self.connector.get(store.base_url, fhir_path, self.config.fhir_allowed_types)
        resource_type = "Bundle" if parsed.is_search else parsed.resource_type
        return {"parsed": parsed, "body": body, "resource_type": resource_type}

    def prepare_share(
        self,
        grantor: str,
        fhir_path: str,
        expires_at: Optional[int] = None,
        store_name: Optional[str] = None,
    ) -> dict:
        """Pointer draft for client-side token construction: the grantor's own
        pointer fields, returned only to the authenticated creator."""
        store = self.config.store(store_name)
        fetched = self._fetch_for_share(store, fhir_path)
        rp = make_reference_pointer(
            base_url=store.base_url,
            path=fhir_path,
            resource_body=fetched["body"],
            created_by=grantor,
            expires_at=expires_at,
            allowed_types=self.config.fhir_allowed_types,
            now=self.clock.now(),
        )
        return {
            "pointer": rp.to_dict(),
            "resource_type": fetched["resource_type"],
            "default_token_name": default_token_name(fetched["resource_type"], rp.data_hash),
        }

    def share(
        self,
        grantor: str,
        recipient_handle: str,
        fhir_path: str,
        token_name: Optional[str] = None,
        expires_at: Optional[int] = None,
        signing_private_key: Optional[str] = None,
        token: Optional[str] = None,
        store_name: Optional[str] = None,
    ) -> dict:
        """Grant access: build (or accept) the sign-then-encrypt token and
        record the grant on the ledger.

        Exactly one of ``signing_private_key`` (the node performs the crypto
        with a request-scoped key) or ``token`` (the client performed the
        crypto locally) must be supplied.
        """
        if (token is None) == (signing_private_key is None):
            raise errors.MalformedPayload(
                "supply exactly one of signing_private_key or token"
            )
        try:
            recipient = self.engine.registry_lookup(recipient_handle)
        except errors.NotFound as exc:
            raise errors.UnknownGrantee(f"recipient not registered: {recipient_handle}") from exc

        store = self.config.store(store_name)
        fetched = self._fetch_for_share(store, fhir_path)

        if token is None:
            rp = make_reference_pointer(
                base_url=store.base_url,
                path=fhir_path,
                resource_body=fetched["body"],
                created_by=grantor,
                expires_at=expires_at,
                allowed_types=self.config.fhir_allowed_types,
                now=self.clock.now(),
            )
            signing_key = crypto.load_private_key(signing_private_key)
            token = crypto.create_access_token(
                rp,
                signing_key,
                crypto.load_public_key(recipient.encryption_public_key),
                created_at=self.clock.now(),
            )
            data_hash = rp.data_hash
        else:
            envelope = crypto.parse_envelope(token)
            if envelope["sender_hint"] != grantor:
                raise errors.TokenSenderMismatch("token was not created by this session's identity")
            data_hash = resource_data_hash(fetched["body"])

        name = token_name or default_token_name(fetched["resource_type"], data_hash)
        tx = self._submit(
            "Access",
            contracts.GRANT,
            {
                "actor": grantor,
                "grantee": recipient.encryption_public_key,
                "token_name": name,
                "token": token,
            },
        )
        return {"token_name": name, "sequence": tx.sequence}

    def revoke(self, grantor: str, recipient_handle: str, token_name: str) -> dict:
        try:
            recipient = self.engine.registry_lookup(recipient_handle)
            grantee_key = recipient.encryption_public_key
        except errors.NotFound:
            grantee_key = recipient_handle  # allow revoking grants to rotated-away keys
        tx = self._submit(
            "Access",
            contracts.REVOKE,
            {"actor": grantor, "grantee": grantee_key, "token_name": token_name},
        )
        return {"sequence": tx.sequence}

    def grant_summaries(self, identity: str) -> dict[str, list[dict]]:
        listing = self.engine.access_list_for(identity)

        def summarize(record: GrantRecord, counterparty: str) -> dict:
            return {
                "token_name": record.token_name,
                "counterparty": self.handle_for(counterparty) or counterparty,
                "authorized": record.authorized,
                "updated_at": record.updated_at,
            }

        return {
            "granted_to_me": [summarize(r, r.grantor) for r in listing["granted_to_me"]],
            "granted_by_me": [summarize(r, r.grantee) for r in listing["granted_by_me"]],
        }

    def get_token(self, grantee: str, token_name: str) -> dict:
        """The grantee's own stored envelope plus what they need to open it."""
        record = self.engine.access_get_token(grantee, token_name)
        grantor_identity = self.engine.registry_lookup(record.grantor)
        return {
            "token_name": record.token_name,
            "authorized": record.authorized,
            "token": record.token,
            "grantor_handle": grantor_identity.directory_handle,
            "grantor_signing_public_key": grantor_identity.signing_public_key,
            "updated_at": record.updated_at,
        }

    # -- viewing ------------------------------------------------------------------

    def view(
        self,
        grantee: str,
        token_name: str,
        encryption_private_key: Optional[str] = None,
        reference_pointer: Optional[dict] = None,
    ) -> dict:
        """Consume a token: re-check authorization, resolve the pointer, fetch
        the resource, and log the read.  The pointer itself never appears in
        the response."""
        record = self.engine.access_get_token(grantee, token_name)
        if not record.authorized:
            # failure-marked consume transaction preserves the audit trail
            self._consume_tx(grantee, record)
            raise errors.RevokedAccess("grant has been revoked")

        if (reference_pointer is None) == (encryption_private_key is None):
            raise errors.MalformedPayload(
                "supply exactly one of encryption_private_key or reference_pointer"
            )

        envelope = crypto.parse_envelope(record.token)
        if encryption_private_key is not None:
            private = crypto.load_private_key(encryption_private_key)
            grantor_identity = self.engine.registry_lookup(record.grantor)
            rp = crypto.open_access_token(
                record.token,
                private,
                crypto.load_public_key(grantor_identity.signing_public_key),
            )
        else:
            rp = ReferencePointer.from_dict(reference_pointer)
            if rp.digest() != envelope["rp_digest"]:
                raise errors.DecryptionFailed(
                    "posted pointer does not match the granted token"
                )
        if rp.created_by != record.grantor:
            raise errors.DecryptionFailed("pointer creator does not match grantor")
        if rp.base_url not in {s.base_url for s in self.config.stores}:
            raise errors.FetchFailed("pointer references an unconfigured endpoint")

        result = self.connector.fetch(rp, self.config.fhir_allowed_types)
        self._consume_tx(grantee, record)
        return {
            "resource": result.resource.body,
            "integrity": result.integrity.value,
            "sender_handle": self.handle_for(record.grantor),
            "token_name": token_name,
        }

    def _consume_tx(self, grantee: str, record: GrantRecord) -> Transaction:
        tx = self.ledger.submit(
            "Access",
            contracts.CONSUME,
            {
                "actor": grantee,
                "grantee": grantee,
                "grantor": record.grantor,
                "token_name": record.token_name,
            },
            sender=self.service_sender,
            signer=lambda data: crypto.sign(self._service_key, data),
        )
        return tx

    # -- events and audit -------------------------------------------------------

    def events_since(self, identity: str, since_sequence: int = -1,
                     wait_ms: int = 0) -> list[SharingEvent]:
        """Long-poll feed: events involving the identity, strictly after the
        cursor, in sequence order.  Delivery is at-least-once; clients
        de-duplicate by sequence."""
        deadline = time.monotonic() + wait_ms / 1000.0

        def select() -> list[SharingEvent]:
            return [
                e for e in self._events
                if e.sequence > since_sequence and identity in (e.actor, e.subject)
            ]

        with self._events_cond:
            found = select()
            while not found:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._events_cond.wait(timeout=min(remaining, 0.25))
                found = select()
            return found

    def audit(
        self,
        identity: Optional[str] = None,
        contract: Optional[str] = None,
        operation: Optional[str] = None,
        filter_identity: Optional[str] = None,
        since_sequence: Optional[int] = None,
    ) -> list[Transaction]:
        """Ledger projection; ``identity=None`` means admin full scope."""
        txs = self.ledger.query_log(QueryFilter(
            contract=contract, operation=operation,
            identity=filter_identity, since_sequence=since_sequence,
        ))
        if identity is not None:
            txs = [tx for tx in txs if identity in identities_in(tx)]
        return txs

    # -- lifecycle ---------------------------------------------------------------

    def seal_pending(self) -> None:
        if self.ledger.pending:
            self.ledger.seal_block()

    def close(self) -> None:
        self.seal_pending()
        self.connector.close()


def default_token_name(resource_type: str, data_hash: str) -> str:
    return f"{resource_type.lower()}-{data_hash[:8]}"
