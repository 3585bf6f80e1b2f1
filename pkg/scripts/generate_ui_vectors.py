#!/usr/bin/env python3
"""Regenerate the cross-language test vectors consumed by the portal tests.

Run from the repo root after any change to the envelope or signature wire
format:

    python3 scripts/generate_ui_vectors.py
"""
from __future__ import annotations

import json
from pathlib import Path

from careledger import crypto
from careledger.canonical import b64u_decode, b64u_encode, canonical_bytes
from careledger.fhir.pointers import ReferencePointer

OUT = Path(__file__).parent.parent / "frontend" / "testdata" / "vectors.json"


def key_bundle(material: crypto.KeyMaterial) -> dict:
    return {
        "encryption_public_key": material.encryption_public_b64,
        "encryption_private_key": material.encryption_private_b64,
        "signing_public_key": material.signing_public_b64,
        "signing_private_key": material.signing_private_b64,
    }


def main() -> None:
    alice = crypto.generate_key_material()
    bob = crypto.generate_key_material()

    rp = ReferencePointer(
        base_url="mock://oncology/fhir",
        path="Patient/pt-1",
        data_hash="5e" * 32,
        created_by=alice.encryption_public_b64,
        expires_at=2_000_000_000,
    )
    token = crypto.create_access_token(
        rp, alice.signing_private, bob.encryption_public, created_at=1_750_000_000
    )

    nonce = b64u_encode(b"\x01\x02" * 16)
    challenge_signature = b64u_encode(crypto.sign(alice.signing_private, b64u_decode(nonce)))

    canonical_sample = {"b": 1, "a": {"y": None, "x": [True, "café"]}, "n": -7}

    vectors = {
        "note": "generated by scripts/generate_ui_vectors.py; do not edit by hand",
        "keys": {"alice": key_bundle(alice), "bob": key_bundle(bob)},
        "pointer": rp.to_dict(),
        "token": token,
        "challenge": {"nonce": nonce, "signature": challenge_signature},
        "canonical_sample": {
            "value": canonical_sample,
            "encoded": canonical_bytes(canonical_sample).decode("utf-8"),
        },
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(vectors, indent=2) + "\n", "utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
