"""Cross-runtime interop: envelopes built by the browser crypto (WebCrypto,
via the portal's plain-JS mirror) must open on the node, and vice versa.

The forward direction (node-built envelope opened by the portal) is covered
by the portal's own test suite against committed vectors; this module proves
the reverse with a real WebCrypto run.
"""
import json
import shutil
import subprocess
from pathlib import Path

import pytest

from careledger import crypto
from careledger.canonical import b64u_decode, b64u_encode
from careledger.fhir.pointers import ReferencePointer

SCRIPT = Path(__file__).parent.parent / "frontend" / "scripts" / "make_envelope.mjs"

node_missing = shutil.which("node") is None
pytestmark = pytest.mark.skipif(node_missing, reason="node runtime not available")


@pytest.fixture(scope="module")
def webcrypto_output():
    alice = crypto.generate_key_material()
    bob = crypto.generate_key_material()
    rp = ReferencePointer(
        base_url="mock://oncology/fhir",
        path="Observation/obs-1",
        data_hash="77" * 32,
        created_by=alice.encryption_public_b64,
        expires_at=1_900_000_000,
    )
    nonce = b64u_encode(b"\x10\x32" * 16)
    request = {
        "pointer": rp.to_dict(),
        "sender_signing_private_key": alice.signing_private_b64,
        "recipient_encryption_public_key": bob.encryption_public_b64,
        "created_at": 1_750_000_123,
        "challenge_nonce": nonce,
    }
    proc = subprocess.run(
        ["node", str(SCRIPT)],
        input=json.dumps(request).encode(),
        capture_output=True,
        timeout=60,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    return {
        "alice": alice, "bob": bob, "rp": rp, "nonce": nonce,
        "reply": json.loads(proc.stdout.decode()),
    }


def test_browser_built_envelope_opens_on_the_node(webcrypto_output):
    o = webcrypto_output
    opened = crypto.open_access_token(
        o["reply"]["token"],
        o["bob"].encryption_private,
        o["alice"].signing_public,
    )
    assert opened == o["rp"]


def test_browser_built_envelope_fails_for_wrong_recipient(webcrypto_output):
    o = webcrypto_output
    outsider = crypto.generate_key_material()
    with pytest.raises(Exception) as excinfo:
        crypto.open_access_token(
            o["reply"]["token"], outsider.encryption_private, o["alice"].signing_public
        )
    assert type(excinfo.value).__name__ == "DecryptionFailed"


def test_browser_challenge_signature_verifies_on_the_node(webcrypto_output):
    o = webcrypto_output
    signature = o["reply"]["challenge"]["signature"]
    assert crypto.verify(
        o["alice"].signing_public,
        b64u_decode(signature),
        b64u_decode(o["nonce"]),
    )


def test_browser_envelope_is_grant_acceptable(webcrypto_output):
    """The node's grant path accepts a browser-built token (sender binding)."""
    o = webcrypto_output
    envelope = crypto.parse_envelope(o["reply"]["token"])
    assert envelope["sender_hint"] == o["alice"].encryption_public_b64
    assert envelope["rp_digest"] == o["rp"].digest()
