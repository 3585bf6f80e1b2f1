"""HTTP/JSON API over a running node.

Thin controller layer: requests are authenticated against the session store,
translated into node operations, and domain errors become a stable
``{code, message}`` envelope with the proper status.  All state lives in the
node; handlers hold none.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .. import errors
from ..ledger import Transaction
from ..node import Node, SharingEvent


class RegisterBody(BaseModel):
    handle: str
    encryption_public_key: str
    signing_public_key: str


class LoginBody(BaseModel):
    handle: str
    nonce: str
    signature: str


class ShareBody(BaseModel):
    recipient_handle: str
    fhir_path: str
    token_name: Optional[str] = None
    expires_at: Optional[int] = None
    signing_private_key: Optional[str] = None
    token: Optional[str] = None
    store: Optional[str] = None


class PrepareShareBody(BaseModel):
    fhir_path: str
    expires_at: Optional[int] = None
    store: Optional[str] = None


class RevokeBody(BaseModel):
    recipient_handle: str
    token_name: str


class ViewBody(BaseModel):
    token_name: str
    encryption_private_key: Optional[str] = None
    reference_pointer: Optional[dict] = None


class RotateKeyBody(BaseModel):
    handle: str
    encryption_public_key: str
    signing_public_key: str


def _tx_view(tx: Transaction) -> dict[str, Any]:
    return tx.to_record()


def _event_view(event: SharingEvent) -> dict[str, Any]:
    return event.to_dict()


def build_app(node: Node) -> FastAPI:
    app = FastAPI(title="careledger node", docs_url=None, redoc_url=None)

    @app.exception_handler(errors.NodeError)
    async def node_error_handler(_request: Request, exc: errors.NodeError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message},
        )

    def require_identity(authorization: Optional[str] = Header(default=None)) -> str:
        token = None
        if authorization and authorization.lower().startswith("bearer "):
            token = authorization[7:].strip()
        return node.authenticate(token)

    # -- registration and sessions -----------------------------------------

    @app.post("/register")
    def register(body: RegisterBody):
        node.register(body.handle, body.encryption_public_key, body.signing_public_key)
        return {"registered": True}

    @app.get("/challenge")
    def challenge():
        ch = node.make_challenge()
        return {"nonce": ch.nonce, "issued_at": ch.issued_at, "ttl_seconds": ch.ttl_seconds}

    @app.post("/login")
    def login(body: LoginBody):
        session = node.login(body.handle, body.nonce, body.signature)
        return {"session_token": session.session_token, "expires_at": session.expires_at}

    @app.post("/logout")
    def logout(authorization: Optional[str] = Header(default=None)):
        if authorization and authorization.lower().startswith("bearer "):
            node.logout(authorization[7:].strip())
        return {"ok": True}

    @app.get("/whoami")
    def whoami(identity: str = Depends(require_identity)):
        return {"identity": identity, "handle": node.handle_for(identity)}

    @app.get("/identities/{handle}")
    def identity_lookup(handle: str):
        ident = node.identity_for(handle)
        return {
            "handle": ident.directory_handle,
            "encryption_public_key": ident.encryption_public_key,
            "signing_public_key": ident.signing_public_key,
            "registered_at": ident.registered_at,
        }

    # -- sharing -------------------------------------------------------------

    @app.post("/share")
    def share(body: ShareBody, identity: str = Depends(require_identity)):
        return node.share(
            grantor=identity,
            recipient_handle=body.recipient_handle,
            fhir_path=body.fhir_path,
            token_name=body.token_name,
            expires_at=body.expires_at,
            signing_private_key=body.signing_private_key,
            token=body.token,
            store_name=body.store,
        )

    @app.post("/share/prepare")
    def share_prepare(body: PrepareShareBody, identity: str = Depends(require_identity)):
        return node.prepare_share(
            grantor=identity,
            fhir_path=body.fhir_path,
            expires_at=body.expires_at,
            store_name=body.store,
        )

    @app.post("/revoke")
    def revoke(body: RevokeBody, identity: str = Depends(require_identity)):
        return node.revoke(identity, body.recipient_handle, body.token_name)

    @app.get("/my-shares")
    def my_shares(identity: str = Depends(require_identity)):
        return {"shares": node.grant_summaries(identity)["granted_by_me"]}

    @app.get("/shared-with-me")
    def shared_with_me(identity: str = Depends(require_identity)):
        return {"shares": node.grant_summaries(identity)["granted_to_me"]}

    @app.get("/tokens/{token_name}")
    def get_token(token_name: str, identity: str = Depends(require_identity)):
        return node.get_token(identity, token_name)

    @app.post("/view")
    def view(body: ViewBody, identity: str = Depends(require_identity)):
        return node.view(
            grantee=identity,
            token_name=body.token_name,
            encryption_private_key=body.encryption_private_key,
            reference_pointer=body.reference_pointer,
        )

    # -- events and audit ------------------------------------------------------

    @app.get("/events")
    def events(
        since_sequence: int = Query(default=-1),
        wait_ms: int = Query(default=0, ge=0, le=25_000),
        identity: str = Depends(require_identity),
    ):
        found = node.events_since(identity, since_sequence=since_sequence, wait_ms=wait_ms)
        return {"events": [_event_view(e) for e in found]}

    @app.get("/audit")
    def audit(
        request: Request,
        contract: Optional[str] = None,
        operation: Optional[str] = None,
        identity_filter: Optional[str] = Query(default=None, alias="identity"),
        since_sequence: Optional[int] = None,
        x_admin_token: Optional[str] = Header(default=None),
    ):
        if x_admin_token is not None:
            node.check_admin(x_admin_token)
            scope = None  # full ledger
        else:
            scope = require_identity(request.headers.get("authorization"))
        txs = node.audit(
            identity=scope,
            contract=contract,
            operation=operation,
            filter_identity=identity_filter,
            since_sequence=since_sequence,
        )
        return {"transactions": [_tx_view(tx) for tx in txs]}

    # -- admin ---------------------------------------------------------------

    @app.post("/admin/rotate-key")
    def rotate_key(body: RotateKeyBody, x_admin_token: Optional[str] = Header(default=None)):
        node.check_admin(x_admin_token)
        tx = node.rotate_key(body.handle, body.encryption_public_key, body.signing_public_key)
        return {"sequence": tx.sequence}

    @app.get("/health")
    def health():
        return {"status": "ok", "height": node.ledger.height,
                "next_sequence": node.ledger.next_sequence}

    if node.config.ui_dir and Path(node.config.ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=node.config.ui_dir, html=True), name="portal")

    return app
