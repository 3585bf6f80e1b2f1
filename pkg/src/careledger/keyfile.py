"""Encrypted-at-rest key wallet for headless clients.

Private keys are sealed under a passphrase-derived key (scrypt +
AES-256-GCM); public keys stay in the clear so registration does not require
the passphrase.  Nothing in this file format ever leaves the local machine.
"""
from __future__ import annotations

import json
import secrets
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from . import crypto, errors
from .canonical import b64u_decode, b64u_encode, canonical_bytes

SCRYPT_N = 2 ** 14
SCRYPT_R = 8
SCRYPT_P = 1


@dataclass
class KeyFile:
    handle: str
    encryption_public_key: str
    signing_public_key: str
    material: crypto.KeyMaterial

    @classmethod
    def create(cls, handle: str) -> "KeyFile":
        material = crypto.generate_key_material()
        return cls(
            handle=handle,
            encryption_public_key=material.encryption_public_b64,
            signing_public_key=material.signing_public_b64,
            material=material,
        )

    def save(self, path: str | Path, passphrase: str, overwrite: bool = False) -> None:
        path = Path(path)
        if path.exists() and not overwrite:
            raise errors.ExistsAlready(f"key file already exists: {path}")
        salt = secrets.token_bytes(16)
        key = _derive(passphrase, salt)
        nonce = secrets.token_bytes(12)
        secret = canonical_bytes(
            {
                "encryption_private_key": self.material.encryption_private_b64,
                "signing_private_key": self.material.signing_private_b64,
            }
        )
        doc = {
            "version": 1,
            "handle": self.handle,
            "sig_scheme": crypto.SIG_SCHEME,
            "enc_scheme": crypto.ENC_SCHEME,
            "encryption_public_key": self.encryption_public_key,
            "signing_public_key": self.signing_public_key,
            "kdf": {"name": "scrypt", "salt": b64u_encode(salt),
                    "n": SCRYPT_N, "r": SCRYPT_R, "p": SCRYPT_P},
            "nonce": b64u_encode(nonce),
            "ciphertext": b64u_encode(AESGCM(key).encrypt(nonce, secret, None)),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
        path.chmod(0o600)

    @classmethod
    def load(cls, path: str | Path, passphrase: str) -> "KeyFile":
        path = Path(path)
        if not path.exists():
            raise errors.NotFound(f"key file not found: {path}")
        try:
            doc = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise errors.BadPassphrase(f"key file unreadable: {exc}") from exc
        kdf = doc.get("kdf", {})
        key = _derive(passphrase, b64u_decode(kdf["salt"]),
                      n=kdf.get("n", SCRYPT_N), r=kdf.get("r", SCRYPT_R), p=kdf.get("p", SCRYPT_P))
        try:
            secret = AESGCM(key).decrypt(
                b64u_decode(doc["nonce"]), b64u_decode(doc["ciphertext"]), None
            )
        except InvalidTag as exc:
            raise errors.BadPassphrase("wrong passphrase for key file") from exc
        private = json.loads(secret)
        material = crypto.KeyMaterial(
            encryption_private=crypto.load_private_key(private["encryption_private_key"]),
            signing_private=crypto.load_private_key(private["signing_private_key"]),
        )
        return cls(
            handle=doc["handle"],
            encryption_public_key=doc["encryption_public_key"],
            signing_public_key=doc["signing_public_key"],
            material=material,
        )

    @staticmethod
    def public_info(path: str | Path) -> dict:
        """Public fields only; no passphrase needed."""
        doc = json.loads(Path(path).read_text("utf-8"))
        return {
            "handle": doc["handle"],
            "encryption_public_key": doc["encryption_public_key"],
            "signing_public_key": doc["signing_public_key"],
        }


def _derive(passphrase: str, salt: bytes, n: int = SCRYPT_N, r: int = SCRYPT_R,
            p: int = SCRYPT_P) -> bytes:
    return Scrypt(salt=salt, length=32, n=n, r=r, p=p).derive(passphrase.encode("utf-8"))
