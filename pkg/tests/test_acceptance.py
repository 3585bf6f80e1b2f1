"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion.  Every tolerance is pinned here; nothing is deferred.
"""
from __future__ import annotations

import json
import random
import time
from contextlib import contextmanager

import pytest
from fastapi.testclient import TestClient

from careledger import crypto, errors
from careledger.canonical import b64u_decode, b64u_encode, canonical_bytes
from careledger.clock import ManualClock
from careledger.config import NodeConfig, StoreConfig
from careledger.errors import InvalidPath
from careledger.fhir import validate_reference_path
from careledger.fhir.pointers import ReferencePointer
from careledger.ledger import Ledger
from careledger.node import Node
from careledger.server import build_app

from conftest import ALICE, BOB, CAROL, register
from oracle import reference_fold
from path_corpus import NEGATIVE_PATHS, POSITIVE_PATHS


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def login(client, handle, keys):
    challenge = client.get("/challenge").json()
    signature = b64u_encode(crypto.sign(keys.signing_private, b64u_decode(challenge["nonce"])))
    response = client.post("/login", json={
        "handle": handle, "nonce": challenge["nonce"], "signature": signature,
    })
    assert response.status_code == 200, response.text
    return {"Authorization": f"Bearer {response.json()['session_token']}"}


def test_end_to_end_share_and_view_under_five_seconds(node_config, clock,
                                                      alice_keys, bob_keys):
    """Register two providers, share a fixture resource, view it: the body
    byte-equals the fixture's canonical form, integrity Verified, < 5 s."""
    with criterion("end-to-end share/view scenario"):
        started = time.monotonic()
        node = Node(node_config, clock=clock)
        client = TestClient(build_app(node), raise_server_exceptions=False)

        for handle, keys in ((ALICE, alice_keys), (BOB, bob_keys)):
            response = client.post("/register", json={
                "handle": handle,
                "encryption_public_key": keys.encryption_public_b64,
                "signing_public_key": keys.signing_public_b64,
            })
            assert response.status_code == 200

        alice = login(client, ALICE, alice_keys)
        shared = client.post("/share", json={
            "recipient_handle": BOB,
            "fhir_path": "Patient/pt-1",
            "signing_private_key": alice_keys.signing_private_b64,
        }, headers=alice)
        assert shared.status_code == 200, shared.text

        bob = login(client, BOB, bob_keys)
        viewed = client.post("/view", json={
            "token_name": shared.json()["token_name"],
            "encryption_private_key": bob_keys.encryption_private_b64,
        }, headers=bob)
        assert viewed.status_code == 200, viewed.text
        body = viewed.json()
        assert body["integrity"] == "Verified"

        fixture_resource = node.stores["oncology"].read("Patient", "pt-1")
        assert canonical_bytes(body["resource"]) == canonical_bytes(fixture_resource)

        elapsed = time.monotonic() - started
        assert elapsed < 5.0, f"scenario took {elapsed:.2f}s"
        node.close()


def test_revocation_is_immediate_across_100_runs(node_config, clock,
                                                 alice_keys, bob_keys):
    """grant -> revoke -> view fails with RevokedAccess in 100% of 100 runs."""
    with criterion("revocation immediacy (100 repetitions)"):
        node = Node(node_config, clock=clock)
        client = TestClient(build_app(node), raise_server_exceptions=False)
        for handle, keys in ((ALICE, alice_keys), (BOB, bob_keys)):
            client.post("/register", json={
                "handle": handle,
                "encryption_public_key": keys.encryption_public_b64,
                "signing_public_key": keys.signing_public_b64,
            })
        alice = login(client, ALICE, alice_keys)
        bob = login(client, BOB, bob_keys)

        refused = 0
        runs = 100
        for i in range(runs):
            name = f"rep-{i}"
            shared = client.post("/share", json={
                "recipient_handle": BOB,
                "fhir_path": "Patient/pt-1",
                "token_name": name,
                "signing_private_key": alice_keys.signing_private_b64,
            }, headers=alice)
            assert shared.status_code == 200
            revoked = client.post("/revoke", json={
                "recipient_handle": BOB, "token_name": name,
            }, headers=alice)
            assert revoked.status_code == 200
            viewed = client.post("/view", json={
                "token_name": name,
                "encryption_private_key": bob_keys.encryption_private_b64,
            }, headers=bob)
            if viewed.status_code == 403 and viewed.json()["code"] == "RevokedAccess":
                refused += 1
        assert refused == runs, f"only {refused}/{runs} views refused"
        node.close()


def test_tamper_evidence_over_1000_bit_flips(node_config, clock, alice_keys, bob_keys):
    """Any single-bit mutation of a sealed 10-block ledger file is detected by
    validation, and node startup refuses the file, in 100% of 1000 trials."""
    with criterion("tamper evidence (1000 single-bit mutations)"):
        node = Node(node_config, clock=clock)
        register(node, ALICE, alice_keys)
        register(node, BOB, bob_keys)
        for i in range(8):
            clock.advance(5)
            node.share(alice_keys.encryption_public_b64, BOB, "Patient/pt-1",
                       token_name=f"blk-{i}",
                       signing_private_key=alice_keys.signing_private_b64)
        node.close()
        ledger_path = node.data_dir / "ledger.jsonl"
        assert len(ledger_path.read_bytes().splitlines()) >= 10

        original = ledger_path.read_bytes()
        rng = random.Random(1234)
        detected = 0
        trials = 1000
        try:
            for _ in range(trials):
                mutated = bytearray(original)
                position = rng.randrange(len(mutated))
                mutated[position] ^= 1 << rng.randrange(8)
                ledger_path.write_bytes(bytes(mutated))

                report = Ledger.validate_file(ledger_path)
                refused_at_startup = False
                try:
                    Node(node_config, clock=ManualClock(start=clock.now()))
                except errors.LedgerCorrupt:
                    refused_at_startup = True
                if not report.ok and refused_at_startup:
                    detected += 1
        finally:
            ledger_path.write_bytes(original)
        assert detected == trials, f"only {detected}/{trials} mutations detected"
        assert Ledger.validate_file(ledger_path).ok  # pristine file still validates


def test_crypto_negative_paths_1000_trials_each():
    """Wrong-recipient, wrong-sender, and ciphertext-flip each fail with the
    specified error in 1000 randomized trials; zero silent successes."""
    with criterion("crypto negative paths (3 x 1000 trials)"):
        rng = random.Random(99)
        trials = 1000

        sender = crypto.generate_key_material()
        recipient = crypto.generate_key_material()
        outsiders = [crypto.generate_key_material() for _ in range(20)]

        def fresh_token(i: int) -> str:
            rp = ReferencePointer(
                base_url="mock://oncology/fhir",
                path=f"Patient/pt-{i}",
                data_hash=bytes(rng.randrange(256) for _ in range(32)).hex(),
                created_by=sender.encryption_public_b64,
            )
            return crypto.create_access_token(rp, sender.signing_private,
                                              recipient.encryption_public, created_at=i)

        wrong_recipient_failures = 0
        for i in range(trials):
            token = fresh_token(i)
            outsider = outsiders[rng.randrange(len(outsiders))]
            with pytest.raises(errors.DecryptionFailed):
                crypto.open_access_token(token, outsider.encryption_private,
                                         sender.signing_public)
            wrong_recipient_failures += 1

        wrong_sender_failures = 0
        for i in range(trials):
            token = fresh_token(i)
            outsider = outsiders[rng.randrange(len(outsiders))]
            with pytest.raises(errors.SignatureInvalid):
                crypto.open_access_token(token, recipient.encryption_private,
                                         outsider.signing_public)
            wrong_sender_failures += 1

        flip_failures = 0
        base_token = fresh_token(0)
        envelope = json.loads(base_token)
        ct = bytearray(b64u_decode(envelope["ct"]))
        for _ in range(trials):
            mutated = bytearray(ct)
            mutated[rng.randrange(len(mutated))] ^= 1 << rng.randrange(8)
            forged = dict(envelope, ct=b64u_encode(bytes(mutated)))
            with pytest.raises(errors.DecryptionFailed):
                crypto.open_access_token(canonical_bytes(forged).decode(),
                                         recipient.encryption_private,
                                         sender.signing_public)
            flip_failures += 1

        assert wrong_recipient_failures == trials
        assert wrong_sender_failures == trials
        assert flip_failures == trials


def test_on_ledger_bytes_per_share_are_size_independent(tmp_path, membership_file,
                                                        alice_keys, bob_keys):
    """Sharing ~1 KB, ~100 KB, and ~10 MB resources appends identical byte
    counts to the ledger (token_name held constant)."""
    with criterion("constant on-chain footprint (1KB/100KB/10MB)"):
        def patient(resource_id: str, payload_chars: int) -> dict:
            return {
                "resourceType": "Patient",
                "id": resource_id,
                "text": {"status": "generated", "div": "x" * payload_chars},
            }

        fixture = tmp_path / "sizes.json"
        fixture.write_text(json.dumps({"resources": [
            patient("pt-size-a", 1_000),
            patient("pt-size-b", 100_000),
            patient("pt-size-c", 10_000_000),
        ]}), "utf-8")

        config = NodeConfig(
            data_dir=str(tmp_path / "data"),
            membership_file=str(membership_file),
            stores=[StoreConfig(name="sizes", base_url="mock://sizes/fhir",
                                fixture=str(fixture))],
        )
        clock = ManualClock(start=1_750_000_000)  # fixed-width timestamps
        node = Node(config, clock=clock)
        register(node, ALICE, alice_keys)
        register(node, BOB, bob_keys)

        ledger_path = node.data_dir / "ledger.jsonl"
        deltas = []
        for resource_id in ("pt-size-a", "pt-size-b", "pt-size-c"):
            before = ledger_path.stat().st_size
            node.share(alice_keys.encryption_public_b64, BOB,
                       f"Patient/{resource_id}",
                       token_name="constant-name",
                       signing_private_key=alice_keys.signing_private_b64)
            deltas.append(ledger_path.stat().st_size - before)
        node.close()
        assert deltas[0] == deltas[1] == deltas[2], f"per-share bytes differ: {deltas}"


def test_state_reconstruction_after_50_plus_operations(node_config, clock,
                                                       alice_keys, bob_keys, carol_keys):
    """After >= 50 mixed operations, a restarted node rebuilds contract state
    bit-identically; an independent fold over the log agrees field by field."""
    with criterion("state reconstruction after restart"):
        node = Node(node_config, clock=clock)
        register(node, ALICE, alice_keys)
        register(node, BOB, bob_keys)
        register(node, CAROL, carol_keys)
        people = [(ALICE, alice_keys), (BOB, bob_keys), (CAROL, carol_keys)]
        rng = random.Random(7)
        active = []
        mutations = 0
        while mutations < 55:
            clock.advance(3)
            try:
                roll = rng.random()
                if roll < 0.45 or not active:
                    grantor_handle, grantor_keys = rng.choice(people)
                    grantee_handle, _ = rng.choice(people)
                    name = f"op-{mutations}"
                    node.share(grantor_keys.encryption_public_b64, grantee_handle,
                               rng.choice(["Patient/pt-1", "Patient/pt-2",
                                           "Observation/obs-1", "DiagnosticReport/dr-1"]),
                               token_name=name,
                               signing_private_key=grantor_keys.signing_private_b64)
                    active.append((grantor_keys.encryption_public_b64, grantee_handle, name))
                elif roll < 0.7:
                    node.revoke(*rng.choice(active))
                else:
                    _, grantee_handle, name = rng.choice(active)
                    grantee_keys = dict(people)[grantee_handle]
                    node.view(grantee_keys.encryption_public_b64, name,
                              encryption_private_key=grantee_keys.encryption_private_b64)
            except errors.NodeError:
                pass
            mutations += 1

        assert node.ledger.next_sequence >= 50
        pre_state = node.engine.export_state()
        pre_fingerprint = node.engine.state_fingerprint()
        node.close()

        reopened = Node(node_config, clock=ManualClock(start=clock.now()))
        post_state = reopened.engine.export_state()
        oracle_state = reference_fold(reopened.ledger.all_transactions())

        assert post_state == pre_state, "restart changed materialized state"
        assert reopened.engine.state_fingerprint() == pre_fingerprint
        # field-by-field against the independent fold
        assert post_state["identities"] == oracle_state["identities"]
        assert post_state["grants"] == oracle_state["grants"]
        assert post_state["applied_sequence"] == oracle_state["applied_sequence"]
        reopened.close()


def test_path_grammar_corpora_classified_without_error():
    """40 valid and 40 invalid paths: zero misclassifications."""
    with criterion("path grammar corpora (40 + 40)"):
        assert len(POSITIVE_PATHS) >= 40 and len(NEGATIVE_PATHS) >= 40
        mistakes = []
        for path in POSITIVE_PATHS:
            try:
                validate_reference_path(path)
            except InvalidPath as exc:
                mistakes.append(f"rejected good path {path!r}: {exc.message}")
        for path in NEGATIVE_PATHS:
            try:
                validate_reference_path(path)
                mistakes.append(f"accepted bad path {path!r}")
            except InvalidPath:
                pass
        assert not mistakes, "\n".join(mistakes)


def test_audit_trail_accounts_for_every_call(node_config, clock,
                                             alice_keys, bob_keys, carol_keys):
    """Ledger transaction count equals successful mutating API calls plus
    failure-marked entries; each successful view logs exactly one consumption."""
    with criterion("audit completeness"):
        node = Node(node_config, clock=clock)
        client = TestClient(build_app(node), raise_server_exceptions=False)
        keys_by_handle = {ALICE: alice_keys, BOB: bob_keys, CAROL: carol_keys}

        successful_mutations = 0
        for handle, keys in keys_by_handle.items():
            response = client.post("/register", json={
                "handle": handle,
                "encryption_public_key": keys.encryption_public_b64,
                "signing_public_key": keys.signing_public_b64,
            })
            assert response.status_code == 200
            successful_mutations += 1

        headers = {h: login(client, h, k) for h, k in keys_by_handle.items()}
        rng = random.Random(21)
        handles = list(keys_by_handle)
        active = []
        successful_views = 0
        for i in range(80):
            roll = rng.random()
            if roll < 0.4:
                grantor = rng.choice(handles)
                grantee = rng.choice(handles)
                name = f"audit-{i}"
                response = client.post("/share", json={
                    "recipient_handle": grantee,
                    "fhir_path": rng.choice(["Patient/pt-1", "Patient/pt-2",
                                             "Observation/obs-2", "Patient/ghost",
                                             "NotAType/1"]),
                    "token_name": name,
                    "signing_private_key": keys_by_handle[grantor].signing_private_b64,
                }, headers=headers[grantor])
                if response.status_code == 200:
                    successful_mutations += 1
                    active.append((grantor, grantee, name))
            elif roll < 0.7 and active:
                grantor, grantee, name = rng.choice(active)
                actor = rng.choice(handles)  # sometimes not the grantor
                response = client.post("/revoke", json={
                    "recipient_handle": grantee, "token_name": name,
                }, headers=headers[actor])
                if response.status_code == 200:
                    successful_mutations += 1
            elif active:
                grantor, grantee, name = rng.choice(active)
                response = client.post("/view", json={
                    "token_name": name,
                    "encryption_private_key": keys_by_handle[grantee].encryption_private_b64,
                }, headers=headers[grantee])
                if response.status_code == 200:
                    successful_mutations += 1
                    successful_views += 1

        transactions = list(node.ledger.all_transactions())
        ok_txs = [tx for tx in transactions if tx.status == "ok"]
        failed_txs = [tx for tx in transactions if tx.status == "failed"]

        assert len(ok_txs) == successful_mutations, (
            f"{len(ok_txs)} successful transactions vs {successful_mutations} successful calls"
        )
        assert len(transactions) == successful_mutations + len(failed_txs)

        consumed = [tx for tx in ok_txs if tx.operation == "consume"]
        assert len(consumed) == successful_views
        assert len({tx.sequence for tx in consumed}) == len(consumed)
        node.close()
