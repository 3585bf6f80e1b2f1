"""Key material, signatures, and the sign-then-encrypt access-token envelope.

Participants hold two distinct P-256 key pairs: an encryption pair whose
public half is the participant's system-wide identity, and a signing pair
registered alongside it.  Sharing a resource wraps its reference pointer in
a two-layer envelope: the pointer is first signed by the sender's private
signing key, then the signed bundle is encrypted to the recipient's public
encryption key via ephemeral ECDH + HKDF-SHA256 + AES-256-GCM.  Only the
holder of the recipient's private encryption key can decrypt, and the inner
signature proves the pointer came from the claimed sender unmodified.

P-256 was chosen over Ed25519/X25519 because browser WebCrypto supports it
universally, and the web portal must produce and open these envelopes with
the platform's native crypto.  Signatures travel as raw 64-byte r||s
(the WebCrypto format); this module converts to/from DER at the boundary.

Wire conventions: public keys are unpadded base64url SPKI DER, private keys
unpadded base64url PKCS8 DER, envelopes canonical JSON with scheme
identifiers in the header for algorithm agility.
"""
from __future__ import annotations

import json
import secrets
from collections import OrderedDict
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import errors
from .canonical import b64u_decode, b64u_encode, canonical_bytes, sha256_hex
from .clock import Clock
from .fhir.pointers import ReferencePointer

ENVELOPE_VERSION = 1
SIG_SCHEME = "ecdsa-p256-sha256"
ENC_SCHEME = "ecies-p256-hkdf-sha256-aes256gcm"
HKDF_INFO_PREFIX = b"careledger-envelope-v1"

CURVE = ec.SECP256R1()


# ---------------------------------------------------------------------------
# key encoding


def encode_public_key(key: ec.EllipticCurvePublicKey) -> str:
    return b64u_encode(
        key.public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )
    )


def encode_private_key(key: ec.EllipticCurvePrivateKey) -> str:
    return b64u_encode(
        key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )


def load_public_key(text: str) -> ec.EllipticCurvePublicKey:
    try:
        key = serialization.load_der_public_key(b64u_decode(text))
    except (ValueError, TypeError) as exc:
        raise errors.MalformedKey(f"not a valid public key: {exc}") from exc
    if not isinstance(key, ec.EllipticCurvePublicKey) or key.curve.name != CURVE.name:
        raise errors.MalformedKey("public key is not P-256")
    return key


def load_private_key(text: str) -> ec.EllipticCurvePrivateKey:
    try:
        key = serialization.load_der_private_key(b64u_decode(text), password=None)
    except (ValueError, TypeError) as exc:
        raise errors.MalformedKey(f"not a valid private key: {exc}") from exc
    if not isinstance(key, ec.EllipticCurvePrivateKey) or key.curve.name != CURVE.name:
        raise errors.MalformedKey("private key is not P-256")
    return key


# ---------------------------------------------------------------------------
# key material


@dataclass(frozen=True)
class KeyMaterial:
    """A participant's two key pairs, encryption and signing, never shared."""

    encryption_private: ec.EllipticCurvePrivateKey
    signing_private: ec.EllipticCurvePrivateKey

    @property
    def encryption_public(self) -> ec.EllipticCurvePublicKey:
        return self.encryption_private.public_key()

    @property
    def signing_public(self) -> ec.EllipticCurvePublicKey:
        return self.signing_private.public_key()

    # encoded forms, used everywhere above this module
    @property
    def encryption_public_b64(self) -> str:
        return encode_public_key(self.encryption_public)

    @property
    def signing_public_b64(self) -> str:
        return encode_public_key(self.signing_public)

    @property
    def encryption_private_b64(self) -> str:
        return encode_private_key(self.encryption_private)

    @property
    def signing_private_b64(self) -> str:
        return encode_private_key(self.signing_private)


def generate_key_material() -> KeyMaterial:
    """Fresh, distinct encryption and signing pairs."""
    try:
        return KeyMaterial(
            encryption_private=ec.generate_private_key(CURVE),
            signing_private=ec.generate_private_key(CURVE),
        )
    except Exception as exc:  # pragma: no cover - no entropy source
        raise errors.EntropyUnavailable(str(exc)) from exc


# ---------------------------------------------------------------------------
# signing (raw r||s wire format, 64 bytes)


def sign(private_key: ec.EllipticCurvePrivateKey, data: bytes) -> bytes:
    der = private_key.sign(data, ec.ECDSA(hashes.SHA256()))
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(public_key: ec.EllipticCurvePublicKey, signature: bytes, data: bytes) -> bool:
    if len(signature) != 64:
        return False
    try:
        der = encode_dss_signature(
            int.from_bytes(signature[:32], "big"),
            int.from_bytes(signature[32:], "big"),
        )
        public_key.verify(der, data, ec.ECDSA(hashes.SHA256()))
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# hybrid encryption primitive


def _derive_key(shared: bytes, epk_der: bytes, recipient_der: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=b"",
        info=HKDF_INFO_PREFIX + epk_der + recipient_der,
    ).derive(shared)


def encrypt_to(
    recipient_public: ec.EllipticCurvePublicKey, plaintext: bytes, aad: bytes = b""
) -> dict:
    """Ephemeral-ECDH hybrid encryption; returns the ciphertext header fields."""
    ephemeral = ec.generate_private_key(CURVE)
    shared = ephemeral.exchange(ec.ECDH(), recipient_public)
    epk_der = ephemeral.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    recipient_der = recipient_public.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    key = _derive_key(shared, epk_der, recipient_der)
    nonce = secrets.token_bytes(12)
    ct = AESGCM(key).encrypt(nonce, plaintext, aad or None)
    return {
        "epk": b64u_encode(epk_der),
        "nonce": b64u_encode(nonce),
        "ct": b64u_encode(ct),
    }


def decrypt_from(
    recipient_private: ec.EllipticCurvePrivateKey, epk: str, nonce: str, ct: str,
    aad: bytes = b"",
) -> bytes:
    try:
        epk_der = b64u_decode(epk)
        ephemeral_pub = serialization.load_der_public_key(epk_der)
        if not isinstance(ephemeral_pub, ec.EllipticCurvePublicKey):
            raise ValueError("ephemeral key is not EC")
        shared = recipient_private.exchange(ec.ECDH(), ephemeral_pub)
        recipient_der = recipient_private.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        key = _derive_key(shared, epk_der, recipient_der)
        return AESGCM(key).decrypt(b64u_decode(nonce), b64u_decode(ct), aad or None)
    except (InvalidTag, UnsupportedAlgorithm, ValueError, TypeError) as exc:
        raise errors.DecryptionFailed(f"token cannot be decrypted: {exc}") from exc


# ---------------------------------------------------------------------------
# access-token envelope (sign, then encrypt)


def _signed_pointer_core(rp_payload_b64: str, sender_hint: str) -> bytes:
    # The sender's identity is bound inside the signed content so a stolen
    # envelope cannot be re-attributed to a different sender.
    return canonical_bytes({"payload": rp_payload_b64, "sender": sender_hint})


def create_access_token(
    rp: ReferencePointer,
    sender_signing_private: ec.EllipticCurvePrivateKey,
    recipient_encryption_public: ec.EllipticCurvePublicKey,
    created_at: int = 0,
) -> str:
    """Sign the pointer with the sender's key, then encrypt to the recipient.

    The cleartext header carries the sender's identity key (so the verifier
    can look up the right signing key) and a digest of the pointer (so a
    later fetch can be bound to this exact grant without revealing it).
    """
    rp_bytes = rp.to_canonical_bytes()  # raises MalformedPointer on bad fields
    sender_hint = rp.created_by
    signature = sign(sender_signing_private, _signed_pointer_core(b64u_encode(rp_bytes), sender_hint))
    signed = {
        "payload": b64u_encode(rp_bytes),
        "sender": sender_hint,
        "signature": b64u_encode(signature),
    }
    header = {
        "v": ENVELOPE_VERSION,
        "enc": ENC_SCHEME,
        "sig": SIG_SCHEME,
        "sender_hint": sender_hint,
        "rp_digest": sha256_hex(rp_bytes),
        "created_at": int(created_at),
    }
    # the header is AEAD-associated data: any mutation of it fails decryption
    body = encrypt_to(recipient_encryption_public, canonical_bytes(signed), aad=canonical_bytes(header))
    return canonical_bytes({**header, **body}).decode("utf-8")


def parse_envelope(token: str) -> dict:
    """Decode and shape-check an envelope without any key material."""
    try:
        env = json.loads(token)
    except (json.JSONDecodeError, TypeError) as exc:
        raise errors.DecryptionFailed(f"token is not a valid envelope: {exc}") from exc
    if not isinstance(env, dict):
        raise errors.DecryptionFailed("token is not a valid envelope")
    if env.get("v") != ENVELOPE_VERSION or env.get("enc") != ENC_SCHEME or env.get("sig") != SIG_SCHEME:
        raise errors.DecryptionFailed("unsupported envelope version or scheme")
    for field in ("sender_hint", "rp_digest", "epk", "nonce", "ct"):
        if not isinstance(env.get(field), str) or not env[field]:
            raise errors.DecryptionFailed(f"envelope missing field {field!r}")
    if not isinstance(env.get("created_at"), int):
        raise errors.DecryptionFailed("envelope missing field 'created_at'")
    return env


def envelope_aad(env: dict) -> bytes:
    return canonical_bytes(
        {
            "v": env["v"],
            "enc": env["enc"],
            "sig": env["sig"],
            "sender_hint": env["sender_hint"],
            "rp_digest": env["rp_digest"],
            "created_at": env["created_at"],
        }
    )


def open_access_token(
    token: str,
    recipient_encryption_private: ec.EllipticCurvePrivateKey,
    sender_signing_public: ec.EllipticCurvePublicKey,
) -> ReferencePointer:
    """Decrypt and verify an envelope; returns the pointer only if both the
    decryption and the inner signature succeed.  Expiry is not checked here;
    the fetch path surfaces expired pointers."""
    env = parse_envelope(token)
    plaintext = decrypt_from(
        recipient_encryption_private, env["epk"], env["nonce"], env["ct"],
        aad=envelope_aad(env),
    )
    try:
        signed = json.loads(plaintext)
        payload_b64 = signed["payload"]
        sender = signed["sender"]
        signature = b64u_decode(signed["signature"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise errors.DecryptionFailed(f"envelope interior malformed: {exc}") from exc

    if sender != env["sender_hint"]:
        raise errors.SignatureInvalid("signed sender does not match envelope header")
    if not verify(sender_signing_public, signature, _signed_pointer_core(payload_b64, sender)):
        raise errors.SignatureInvalid("pointer signature does not verify against sender")

    rp_bytes = b64u_decode(payload_b64)
    if sha256_hex(rp_bytes) != env["rp_digest"]:
        raise errors.SignatureInvalid("pointer digest does not match envelope header")
    try:
        rp = ReferencePointer.from_dict(json.loads(rp_bytes))
    except (json.JSONDecodeError, ValueError) as exc:
        raise errors.DecryptionFailed(f"pointer payload malformed: {exc}") from exc
    if rp.created_by != sender:
        raise errors.SignatureInvalid("pointer creator does not match signer")
    return rp


# ---------------------------------------------------------------------------
# challenge-response authentication


@dataclass(frozen=True)
class Challenge:
    nonce: str  # base64url, >= 128 bits
    issued_at: int
    ttl_seconds: int


class ChallengeStore:
    """Single-use login nonces with expiry; bounded LRU so an unauthenticated
    client cannot grow memory without limit."""

    def __init__(self, clock: Clock, ttl_seconds: int = 120, max_entries: int = 1024):
        self._clock = clock
        self._ttl = ttl_seconds
        self._max = max_entries
        self._entries: OrderedDict[str, Challenge] = OrderedDict()

    def make_challenge(self) -> Challenge:
        nonce = b64u_encode(secrets.token_bytes(32))
        challenge = Challenge(nonce=nonce, issued_at=self._clock.now(), ttl_seconds=self._ttl)
        self._entries[nonce] = challenge
        while len(self._entries) > self._max:
            self._entries.popitem(last=False)
        return challenge

    def peek(self, nonce: str) -> str:
        """State of a nonce without consuming it: live, expired, or unknown."""
        challenge = self._entries.get(nonce)
        if challenge is None:
            return "unknown"
        if self._clock.now() > challenge.issued_at + challenge.ttl_seconds:
            return "expired"
        return "live"

    def verify_challenge_response(
        self, nonce: str, signature_b64: str, signing_public_b64: str
    ) -> bool:
        """True iff the nonce is live and unused and the signature over its
        raw bytes verifies; consumes the nonce on success."""
        challenge = self._entries.get(nonce)
        if challenge is None:
            return False
        if self._clock.now() > challenge.issued_at + challenge.ttl_seconds:
            del self._entries[nonce]
            return False
        try:
            ok = verify(
                load_public_key(signing_public_b64),
                b64u_decode(signature_b64),
                b64u_decode(nonce),
            )
        except (errors.MalformedKey, ValueError):
            return False
        if ok:
            del self._entries[nonce]  # single use
        return ok
