"""Command-line client and node operator tool.

Output is line-oriented JSON for scriptability.  Exit codes: 0 success,
1 user error (rejected request, bad input), 2 system error (unreachable
server, corrupt ledger, bad config).

By default every subcommand performs private-key operations locally from the
key wallet and never puts key material on the wire; ``--post-key`` switches
the sharing/viewing commands to the request-time key fallback for use over
trusted transports.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Optional

import click
import httpx

from . import crypto, errors
from .config import CONFIG_ENV_VAR, load_config
from .keyfile import KeyFile

DEFAULT_SESSION_FILE = ".careledger-session.json"

EXIT_USER = 1
EXIT_SYSTEM = 2


def _emit(data: Any) -> None:
    click.echo(json.dumps(data, sort_keys=True))


def _fail(message: str, code: int) -> None:
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(code)


def _request(method: str, url: str, **kwargs) -> dict:
    try:
        response = httpx.request(method, url, timeout=30.0, **kwargs)
    except httpx.HTTPError as exc:
        _fail(f"server unreachable: {exc}", EXIT_SYSTEM)
    if response.status_code >= 500:
        _fail(f"{response.status_code}: {response.text}", EXIT_SYSTEM)
    if response.status_code >= 400:
        _fail(f"{response.status_code}: {response.text}", EXIT_USER)
    return response.json()


def _load_config_or_die(path: Optional[str]):
    try:
        return load_config(path)
    except errors.NodeError as exc:
        _fail(f"{exc.code}: {exc.message}", EXIT_SYSTEM)


class SessionContext:
    def __init__(self, session_file: str):
        self.path = Path(session_file)
        if not self.path.exists():
            _fail(f"not logged in (no session file at {self.path})", EXIT_USER)
        data = json.loads(self.path.read_text("utf-8"))
        self.server: str = data["server"]
        self.token: str = data["session_token"]
        self.handle: str = data["handle"]
        self.keys_file: Optional[str] = data.get("keys_file")

    @property
    def headers(self) -> dict:
        return {"Authorization": f"Bearer {self.token}"}

    def url(self, path: str) -> str:
        return self.server.rstrip("/") + path

    def wallet(self, passphrase: Optional[str]) -> KeyFile:
        if not self.keys_file:
            _fail("session has no key wallet; log in with --keys", EXIT_USER)
        if passphrase is None:
            passphrase = click.prompt("passphrase", hide_input=True)
        try:
            return KeyFile.load(self.keys_file, passphrase)
        except errors.BadPassphrase as exc:
            _fail(exc.message, EXIT_USER)


@click.group()
def main():
    """Clinical data-sharing node client."""


# -- node lifecycle ----------------------------------------------------------


@main.group()
def node():
    """Node lifecycle."""


@node.command("serve")
@click.option("--config", "config_path", default=None,
              help=f"Config file (or ${CONFIG_ENV_VAR}).")
def node_serve(config_path: Optional[str]):
    """Run the HTTP node; refuses to start on a corrupt ledger."""
    import uvicorn

    from .node import Node
    from .server import build_app

    try:
        cfg = load_config(config_path)
        running = Node(cfg)
    except errors.NodeError as exc:
        _fail(f"{exc.code}: {exc.message}", EXIT_SYSTEM)
    app = build_app(running)
    try:
        uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    finally:
        running.close()


# -- key wallet ----------------------------------------------------------------


@main.group()
def keys():
    """Local key wallet."""


@keys.command("new")
@click.option("--handle", required=True)
@click.option("--file", "file_", default=None, help="Wallet path (default <handle>.keys.json).")
@click.option("--passphrase", default=None)
def keys_new(handle: str, file_: Optional[str], passphrase: Optional[str]):
    """Generate key pairs and write an encrypted wallet."""
    path = file_ or f"{handle}.keys.json"
    if passphrase is None:
        passphrase = click.prompt("passphrase", hide_input=True, confirmation_prompt=True)
    wallet = KeyFile.create(handle)
    try:
        wallet.save(path, passphrase)
    except errors.ExistsAlready as exc:
        _fail(exc.message, EXIT_USER)
    _emit({
        "handle": handle,
        "file": str(path),
        "encryption_public_key": wallet.encryption_public_key,
        "signing_public_key": wallet.signing_public_key,
    })


@keys.command("export")
@click.option("--file", "file_", required=True)
@click.option("--passphrase", default=None)
def keys_export(file_: str, passphrase: Optional[str]):
    """Print the decrypted private keys for pasting into the web portal.

    Sensitive output: the portal keeps it in page memory only, but anything
    that captures your terminal sees it too.
    """
    if passphrase is None:
        passphrase = click.prompt("passphrase", hide_input=True)
    try:
        wallet = KeyFile.load(file_, passphrase)
    except errors.NodeError as exc:
        _fail(exc.message, EXIT_USER)
    _emit({
        "encryption_private_key": wallet.material.encryption_private_b64,
        "signing_private_key": wallet.material.signing_private_b64,
    })


@keys.command("show")
@click.option("--file", "file_", required=True)
@click.option("--passphrase", default=None,
              help="If given, decrypts the wallet to prove the keys open.")
def keys_show(file_: str, passphrase: Optional[str]):
    """Print public keys; with a passphrase, verify the private halves."""
    try:
        if passphrase is None:
            _emit(KeyFile.public_info(file_))
            return
        wallet = KeyFile.load(file_, passphrase)
    except errors.NodeError as exc:
        _fail(exc.message, EXIT_USER)
    _emit({
        "handle": wallet.handle,
        "encryption_public_key": wallet.material.encryption_public_b64,
        "signing_public_key": wallet.material.signing_public_b64,
        "private_keys": "ok",
    })


# -- provider commands -----------------------------------------------------------


@main.command()
@click.option("--server", required=True)
@click.option("--keys", "keys_file", required=True)
def register(server: str, keys_file: str):
    """Register the wallet's public keys under its handle."""
    info = KeyFile.public_info(keys_file)
    out = _request("POST", server.rstrip("/") + "/register", json={
        "handle": info["handle"],
        "encryption_public_key": info["encryption_public_key"],
        "signing_public_key": info["signing_public_key"],
    })
    _emit(out)


@main.command()
@click.option("--server", required=True)
@click.option("--keys", "keys_file", required=True)
@click.option("--passphrase", default=None)
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
def login(server: str, keys_file: str, passphrase: Optional[str], session_file: str):
    """Challenge-response sign-in; the signature is made locally."""
    if passphrase is None:
        passphrase = click.prompt("passphrase", hide_input=True)
    try:
        wallet = KeyFile.load(keys_file, passphrase)
    except errors.NodeError as exc:
        _fail(exc.message, EXIT_USER)
    challenge = _request("GET", server.rstrip("/") + "/challenge")
    signature = crypto.b64u_encode(
        crypto.sign(wallet.material.signing_private, crypto.b64u_decode(challenge["nonce"]))
    )
    out = _request("POST", server.rstrip("/") + "/login", json={
        "handle": wallet.handle,
        "nonce": challenge["nonce"],
        "signature": signature,
    })
    Path(session_file).write_text(json.dumps({
        "server": server,
        "session_token": out["session_token"],
        "handle": wallet.handle,
        "keys_file": str(Path(keys_file).resolve()),
    }), "utf-8")
    _emit({"logged_in": wallet.handle, "expires_at": out["expires_at"]})


@main.command()
@click.option("--recipient", required=True)
@click.option("--path", "fhir_path", required=True)
@click.option("--token-name", default=None)
@click.option("--expires-at", type=int, default=None)
@click.option("--store", default=None)
@click.option("--post-key", is_flag=True, help="Send the signing key instead of building the token locally.")
@click.option("--passphrase", default=None)
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
def share(recipient: str, fhir_path: str, token_name: Optional[str], expires_at: Optional[int],
          store: Optional[str], post_key: bool, passphrase: Optional[str], session_file: str):
    """Grant a recipient access to a resource path."""
    ctx = SessionContext(session_file)
    body: dict[str, Any] = {
        "recipient_handle": recipient,
        "fhir_path": fhir_path,
        "token_name": token_name,
        "expires_at": expires_at,
        "store": store,
    }
    wallet = ctx.wallet(passphrase)
    if post_key:
        body["signing_private_key"] = wallet.material.signing_private_b64
    else:
        draft = _request("POST", ctx.url("/share/prepare"), headers=ctx.headers, json={
            "fhir_path": fhir_path, "expires_at": expires_at, "store": store,
        })
        recipient_identity = _request("GET", ctx.url(f"/identities/{recipient}"))
        from .fhir import ReferencePointer

        rp = ReferencePointer.from_dict(draft["pointer"])
        body["token"] = crypto.create_access_token(
            rp,
            wallet.material.signing_private,
            crypto.load_public_key(recipient_identity["encryption_public_key"]),
        )
        body["token_name"] = token_name or draft["default_token_name"]
    _emit(_request("POST", ctx.url("/share"), headers=ctx.headers, json=body))


@main.command()
@click.option("--recipient", required=True)
@click.option("--token-name", required=True)
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
def revoke(recipient: str, token_name: str, session_file: str):
    """Withdraw a grant; takes effect immediately."""
    ctx = SessionContext(session_file)
    _emit(_request("POST", ctx.url("/revoke"), headers=ctx.headers, json={
        "recipient_handle": recipient, "token_name": token_name,
    }))


@main.command()
@click.option("--token-name", required=True)
@click.option("--post-key", is_flag=True, help="Send the decryption key instead of opening locally.")
@click.option("--passphrase", default=None)
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
def view(token_name: str, post_key: bool, passphrase: Optional[str], session_file: str):
    """Open a received token and fetch the resource it references."""
    ctx = SessionContext(session_file)
    wallet = ctx.wallet(passphrase)
    if post_key:
        body = {"token_name": token_name,
                "encryption_private_key": wallet.material.encryption_private_b64}
    else:
        stored = _request("GET", ctx.url(f"/tokens/{token_name}"), headers=ctx.headers)
        if not stored.get("authorized"):
            _fail("grant has been revoked", EXIT_USER)
        try:
            rp = crypto.open_access_token(
                stored["token"],
                wallet.material.encryption_private,
                crypto.load_public_key(stored["grantor_signing_public_key"]),
            )
        except errors.NodeError as exc:
            _fail(f"{exc.code}: {exc.message}", EXIT_USER)
        body = {"token_name": token_name, "reference_pointer": rp.to_dict()}
    _emit(_request("POST", ctx.url("/view"), headers=ctx.headers, json=body))


@main.command()
@click.option("--since", "since_sequence", type=int, default=-1)
@click.option("--wait-ms", type=int, default=0)
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
def events(since_sequence: int, wait_ms: int, session_file: str):
    """Sharing events involving the logged-in identity."""
    ctx = SessionContext(session_file)
    out = _request("GET", ctx.url("/events"), headers=ctx.headers,
                   params={"since_sequence": since_sequence, "wait_ms": wait_ms})
    for event in out["events"]:
        _emit(event)


@main.command()
@click.option("--contract", default=None)
@click.option("--operation", default=None)
@click.option("--identity", default=None)
@click.option("--since", "since_sequence", type=int, default=None)
@click.option("--admin", "admin_config", default=None,
              help="Config path; uses the node admin token for full scope.")
@click.option("--session", "session_file", default=DEFAULT_SESSION_FILE)
@click.option("--server", default=None, help="Server URL (admin mode).")
def audit(contract: Optional[str], operation: Optional[str], identity: Optional[str],
          since_sequence: Optional[int], admin_config: Optional[str],
          session_file: str, server: Optional[str]):
    """Transaction log view: self-scoped by default, full with --admin."""
    params = {k: v for k, v in {
        "contract": contract, "operation": operation,
        "identity": identity, "since_sequence": since_sequence,
    }.items() if v is not None}
    if admin_config:
        cfg = _load_config_or_die(admin_config)
        token = (Path(cfg.data_dir) / "admin_token").read_text("utf-8").strip()
        base = server or f"http://{cfg.host}:{cfg.port}"
        out = _request("GET", base.rstrip("/") + "/audit",
                       headers={"X-Admin-Token": token}, params=params)
    else:
        ctx = SessionContext(session_file)
        out = _request("GET", ctx.url("/audit"), headers=ctx.headers, params=params)
    for tx in out["transactions"]:
        _emit(tx)


# -- admin --------------------------------------------------------------------


@main.group()
def admin():
    """Node administration (filesystem-rooted trust)."""


@admin.group()
def membership():
    """Allowlist of handles approved to register."""


@membership.command("add")
@click.argument("handle")
@click.option("--config", "config_path", default=None)
def membership_add(handle: str, config_path: Optional[str]):
    cfg = _load_config_or_die(config_path)
    from .contracts import MembershipList

    MembershipList(cfg.membership_file, require=True).add(handle)
    _emit({"added": handle, "membership_file": cfg.membership_file})


@membership.command("remove")
@click.argument("handle")
@click.option("--config", "config_path", default=None)
def membership_remove(handle: str, config_path: Optional[str]):
    cfg = _load_config_or_die(config_path)
    from .contracts import MembershipList

    MembershipList(cfg.membership_file, require=True).remove(handle)
    _emit({"removed": handle, "membership_file": cfg.membership_file})


@admin.command("rotate-key")
@click.argument("handle")
@click.option("--keys", "keys_file", required=True, help="Wallet holding the replacement keys.")
@click.option("--config", "config_path", default=None)
@click.option("--server", default=None)
def admin_rotate_key(handle: str, keys_file: str, config_path: Optional[str],
                     server: Optional[str]):
    """Bind new public keys to a handle (lost or stolen key recovery)."""
    cfg = _load_config_or_die(config_path)
    token = (Path(cfg.data_dir) / "admin_token").read_text("utf-8").strip()
    info = KeyFile.public_info(keys_file)
    base = server or f"http://{cfg.host}:{cfg.port}"
    out = _request("POST", base.rstrip("/") + "/admin/rotate-key",
                   headers={"X-Admin-Token": token},
                   json={
                       "handle": handle,
                       "encryption_public_key": info["encryption_public_key"],
                       "signing_public_key": info["signing_public_key"],
                   })
    _emit(out)


if __name__ == "__main__":
    main()
