import pytest

from careledger import crypto, errors
from careledger.clock import ManualClock
from careledger.contracts import ContractEngine, MembershipList
from careledger.fhir.pointers import ReferencePointer
from careledger.ledger import Ledger

from conftest import ALICE, BOB, CAROL
from oracle import reference_fold


@pytest.fixture
def engine(membership_file):
    return ContractEngine(MembershipList(membership_file, require=True))


@pytest.fixture
def harness(tmp_path, membership_file, clock):
    """Engine wired to a real ledger, signed by a service key."""
    service = crypto.generate_key_material()
    engine = ContractEngine(
        MembershipList(membership_file, require=True),
        trusted_senders={service.signing_public_b64},
    )
    ledger = Ledger(tmp_path / "ledger.jsonl", engine, clock)

    def call(contract, operation, payload):
        tx = ledger.submit(contract, operation, payload,
                           sender=service.signing_public_b64,
                           signer=lambda data: crypto.sign(service.signing_private, data))
        if tx.status != "ok":
            raise errors.by_code(tx.error)(tx.error)
        return tx

    return engine, ledger, call


def register_payload(handle, keys):
    return {
        "handle": handle,
        "encryption_public_key": keys.encryption_public_b64,
        "signing_public_key": keys.signing_public_b64,
        "actor": keys.encryption_public_b64,
    }


def make_token(sender_keys, recipient_keys, name_seed="x"):
    rp = ReferencePointer(
        base_url="mock://oncology/fhir",
        path=f"Patient/pt-{name_seed}",
        data_hash="cd" * 32,
        created_by=sender_keys.encryption_public_b64,
    )
    return crypto.create_access_token(
        rp, sender_keys.signing_private, recipient_keys.encryption_public
    )


class TestRegistry:
    def test_register_then_lookup_by_handle(self, harness, alice_keys):
        engine, _, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        identity = engine.registry_lookup(ALICE)
        assert identity.encryption_public_key == alice_keys.encryption_public_b64
        assert identity.signing_public_key == alice_keys.signing_public_b64

    def test_lookup_by_encryption_key_matches_handle_lookup(self, harness, alice_keys):
        engine, _, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        by_handle = engine.registry_lookup(ALICE)
        by_key = engine.registry_lookup(alice_keys.encryption_public_b64)
        assert by_handle == by_key

    def test_duplicate_handle_rejected(self, harness, alice_keys, bob_keys):
        _, _, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        with pytest.raises(errors.DuplicateHandle):
            call("Registry", "register", register_payload(ALICE, bob_keys))

    def test_unlisted_handle_rejected_when_enforced(self, harness, alice_keys):
        _, _, call = harness
        with pytest.raises(errors.NotCertified):
            call("Registry", "register", register_payload("mallory@nowhere.example", alice_keys))

    def test_enforcement_off_allows_any_handle(self, tmp_path, clock, alice_keys):
        service = crypto.generate_key_material()
        engine = ContractEngine(
            MembershipList(None, require=False),
            trusted_senders={service.signing_public_b64},
        )
        ledger = Ledger(tmp_path / "open.jsonl", engine, clock)
        tx = ledger.submit("Registry", "register",
                           register_payload("anyone@anywhere.example", alice_keys),
                           sender=service.signing_public_b64,
                           signer=lambda d: crypto.sign(service.signing_private, d))
        assert tx.status == "ok"

    def test_lookup_unknown_handle_not_found(self, engine):
        with pytest.raises(errors.NotFound):
            engine.registry_lookup("ghost@clinic.example")

    def test_malformed_key_rejected(self, harness, alice_keys):
        _, _, call = harness
        payload = register_payload(ALICE, alice_keys)
        payload["encryption_public_key"] = "bm90LWEta2V5"
        with pytest.raises(errors.MalformedKey):
            call("Registry", "register", payload)

    def test_rotation_rebinds_handle_to_new_keys(self, harness, alice_keys):
        engine, _, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        fresh = crypto.generate_key_material()
        call("Registry", "rotate_key", register_payload(ALICE, fresh))
        assert engine.registry_lookup(ALICE).signing_public_key == fresh.signing_public_b64
        with pytest.raises(errors.NotFound):
            engine.registry_lookup(alice_keys.encryption_public_b64)


class TestAccess:
    @pytest.fixture
    def registered(self, harness, alice_keys, bob_keys, carol_keys):
        engine, ledger, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        call("Registry", "register", register_payload(BOB, bob_keys))
        call("Registry", "register", register_payload(CAROL, carol_keys))
        return engine, ledger, call

    def grant(self, call, grantor_keys, grantee_keys, token_name, token=None):
        return call("Access", "grant", {
            "actor": grantor_keys.encryption_public_b64,
            "grantee": grantee_keys.encryption_public_b64,
            "token_name": token_name,
            "token": token or make_token(grantor_keys, grantee_keys),
        })

    def test_grant_sets_authorized_true(self, registered, alice_keys, bob_keys):
        engine, _, call = registered
        self.grant(call, alice_keys, bob_keys, "pt42-obs")
        record = engine.access_get_token(bob_keys.encryption_public_b64, "pt42-obs")
        assert record.authorized is True
        assert record.token
        assert record.grantor == alice_keys.encryption_public_b64

    def test_grant_to_unregistered_key_fails(self, registered, alice_keys):
        _, _, call = registered
        stranger = crypto.generate_key_material()
        with pytest.raises(errors.UnknownGrantee):
            call("Access", "grant", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": stranger.encryption_public_b64,
                "token_name": "x",
                "token": make_token(alice_keys, stranger),
            })

    def test_regrant_overwrites_and_both_grants_are_logged(self, registered, alice_keys, bob_keys):
        engine, ledger, call = registered
        self.grant(call, alice_keys, bob_keys, "pt42-obs")
        second_token = make_token(alice_keys, bob_keys, name_seed="2")
        self.grant(call, alice_keys, bob_keys, "pt42-obs", token=second_token)
        record = engine.access_get_token(bob_keys.encryption_public_b64, "pt42-obs")
        assert record.token == second_token
        grants = ledger.query_log(operation="grant",
                                  identity=bob_keys.encryption_public_b64)
        assert len(grants) == 2

    def test_empty_token_rejected(self, registered, alice_keys, bob_keys):
        _, _, call = registered
        with pytest.raises(errors.EmptyToken):
            call("Access", "grant", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": "x",
                "token": "",
            })

    def test_received_token_cannot_be_reshared(self, registered, alice_keys, bob_keys, carol_keys):
        # Bob forwarding Alice's envelope under his own name is refused
        _, _, call = registered
        alices_token = make_token(alice_keys, bob_keys)
        with pytest.raises(errors.TokenSenderMismatch):
            call("Access", "grant", {
                "actor": bob_keys.encryption_public_b64,
                "grantee": carol_keys.encryption_public_b64,
                "token_name": "stolen",
                "token": alices_token,
            })

    def test_revoke_clears_token_and_flag(self, registered, alice_keys, bob_keys):
        engine, _, call = registered
        self.grant(call, alice_keys, bob_keys, "pt42-obs")
        call("Access", "revoke", {
            "actor": alice_keys.encryption_public_b64,
            "grantee": bob_keys.encryption_public_b64,
            "token_name": "pt42-obs",
        })
        record = engine.access_get_token(bob_keys.encryption_public_b64, "pt42-obs")
        assert record.authorized is False
        assert record.token == ""

    def test_revoke_never_granted_name_fails(self, registered, alice_keys, bob_keys):
        _, _, call = registered
        with pytest.raises(errors.NoSuchGrant):
            call("Access", "revoke", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": "never-granted",
            })

    def test_only_grantor_may_revoke(self, registered, alice_keys, bob_keys, carol_keys):
        _, _, call = registered
        self.grant(call, alice_keys, bob_keys, "pt42-obs")
        with pytest.raises(errors.NotGrantor):
            call("Access", "revoke", {
                "actor": carol_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": "pt42-obs",
            })

    def test_get_token_unknown_grant(self, registered, bob_keys):
        engine, _, _ = registered
        with pytest.raises(errors.NoSuchGrant):
            engine.access_get_token(bob_keys.encryption_public_b64, "nope")

    def test_list_partitions_by_direction(self, registered, alice_keys, bob_keys):
        engine, _, call = registered
        self.grant(call, alice_keys, bob_keys, "pt42-obs")
        bobs = engine.access_list_for(bob_keys.encryption_public_b64)
        alices = engine.access_list_for(alice_keys.encryption_public_b64)
        assert len(bobs["granted_to_me"]) == 1
        assert len(alices["granted_by_me"]) == 1
        assert bobs["granted_by_me"] == []
        assert alices["granted_to_me"] == []

    def test_fresh_identity_has_empty_lists(self, registered, carol_keys):
        engine, _, _ = registered
        listing = engine.access_list_for(carol_keys.encryption_public_b64)
        assert listing == {"granted_to_me": [], "granted_by_me": []}

    def test_two_grants_one_revoke_listing(self, registered, alice_keys, bob_keys, carol_keys):
        engine, _, call = registered
        self.grant(call, alice_keys, bob_keys, "one")
        self.grant(call, carol_keys, bob_keys, "two")
        call("Access", "revoke", {
            "actor": alice_keys.encryption_public_b64,
            "grantee": bob_keys.encryption_public_b64,
            "token_name": "one",
        })
        listing = engine.access_list_for(bob_keys.encryption_public_b64)
        assert len(listing["granted_to_me"]) == 2
        flags = {r.token_name: r.authorized for r in listing["granted_to_me"]}
        assert flags == {"one": False, "two": True}


class TestReplay:
    def test_state_rebuild_matches_reference_fold(self, registered_scenario):
        engine, ledger = registered_scenario
        assert engine.export_state() == reference_fold(ledger.all_transactions())

    @pytest.fixture
    def registered_scenario(self, harness, alice_keys, bob_keys, carol_keys):
        engine, ledger, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        call("Registry", "register", register_payload(BOB, bob_keys))
        call("Registry", "register", register_payload(CAROL, carol_keys))
        call("Access", "grant", {
            "actor": alice_keys.encryption_public_b64,
            "grantee": bob_keys.encryption_public_b64,
            "token_name": "one",
            "token": make_token(alice_keys, bob_keys),
        })
        call("Access", "revoke", {
            "actor": alice_keys.encryption_public_b64,
            "grantee": bob_keys.encryption_public_b64,
            "token_name": "one",
        })
        with pytest.raises(errors.NoSuchGrant):
            call("Access", "revoke", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": "ghost",
            })
        return engine, ledger

    def test_replaying_full_log_rebuilds_identical_state(self, registered_scenario,
                                                         membership_file):
        engine, ledger = registered_scenario
        rebuilt = ContractEngine(MembershipList(membership_file, require=True))
        for tx in ledger.all_transactions():
            rebuilt.replay(tx)
        assert rebuilt.export_state() == engine.export_state()
        assert rebuilt.state_fingerprint() == engine.state_fingerprint()

    def test_second_application_of_same_sequence_rejected(self, registered_scenario,
                                                          membership_file):
        _, ledger = registered_scenario
        rebuilt = ContractEngine(MembershipList(membership_file, require=True))
        transactions = list(ledger.all_transactions())
        rebuilt.replay(transactions[0])
        with pytest.raises(errors.ReplayRejected):
            rebuilt.replay(transactions[0])

    def test_failed_transactions_stay_on_ledger_with_marker(self, registered_scenario):
        _, ledger = registered_scenario
        failed = [tx for tx in ledger.all_transactions() if tx.status == "failed"]
        assert len(failed) == 1
        assert failed[0].error == "NoSuchGrant"

    def test_unknown_operation_is_logged_failure(self, harness):
        engine, ledger, call = harness
        state_before = engine.export_state()
        with pytest.raises(errors.UnknownOperation):
            call("Registry", "destroy", {"actor": "x"})
        state_after = engine.export_state()
        state_before.pop("applied_sequence")
        state_after.pop("applied_sequence")
        assert state_after == state_before
        failed = [tx for tx in ledger.all_transactions() if tx.status == "failed"]
        assert failed[-1].error == "UnknownOperation"


class TestSenderPolicy:
    def test_unregistered_sender_rejected_for_non_register_ops(self, harness, alice_keys):
        _, ledger, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        stranger = crypto.generate_key_material()
        with pytest.raises(errors.UnknownSender):
            ledger.submit("Access", "revoke",
                          {"actor": "x", "grantee": "y", "token_name": "z"},
                          sender=stranger.signing_public_b64,
                          signer=lambda d: crypto.sign(stranger.signing_private, d))

    def test_anyone_may_submit_a_registration(self, harness, alice_keys):
        _, ledger, _ = harness
        tx = ledger.submit("Registry", "register", register_payload(ALICE, alice_keys),
                           sender=alice_keys.signing_public_b64,
                           signer=lambda d: crypto.sign(alice_keys.signing_private, d))
        assert tx.status == "ok"

    def test_registered_user_may_sign_their_own_transactions(self, harness,
                                                             alice_keys, bob_keys):
        engine, ledger, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        call("Registry", "register", register_payload(BOB, bob_keys))
        tx = ledger.submit("Access", "grant", {
            "actor": alice_keys.encryption_public_b64,
            "grantee": bob_keys.encryption_public_b64,
            "token_name": "self-signed",
            "token": make_token(alice_keys, bob_keys),
        }, sender=alice_keys.signing_public_b64,
            signer=lambda d: crypto.sign(alice_keys.signing_private, d))
        assert tx.status == "ok"
        assert engine.access_get_token(bob_keys.encryption_public_b64, "self-signed").authorized


class TestContractEdgeCases:
    def test_grant_from_unregistered_actor_fails(self, harness, alice_keys, bob_keys):
        _, _, call = harness
        call("Registry", "register", register_payload(BOB, bob_keys))
        with pytest.raises(errors.UnknownGrantor):
            call("Access", "grant", {
                "actor": alice_keys.encryption_public_b64,  # never registered
                "grantee": bob_keys.encryption_public_b64,
                "token_name": "x",
                "token": make_token(alice_keys, bob_keys),
            })

    def test_list_for_unregistered_identity_fails(self, engine):
        with pytest.raises(errors.UnknownIdentity):
            engine.access_list_for("never-registered-key")

    def test_every_grant_record_couples_flag_and_token(self, harness, alice_keys, bob_keys,
                                                       carol_keys):
        engine, _, call = harness
        call("Registry", "register", register_payload(ALICE, alice_keys))
        call("Registry", "register", register_payload(BOB, bob_keys))
        call("Registry", "register", register_payload(CAROL, carol_keys))
        for i in range(6):
            call("Access", "grant", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": f"g-{i}",
                "token": make_token(alice_keys, bob_keys, name_seed=str(i)),
            })
        for i in (1, 4):
            call("Access", "revoke", {
                "actor": alice_keys.encryption_public_b64,
                "grantee": bob_keys.encryption_public_b64,
                "token_name": f"g-{i}",
            })
        state = engine.export_state()
        assert state["grants"], "scenario produced no grants"
        for record in state["grants"].values():
            assert record["authorized"] == bool(record["token"])


class TestMembershipList:
    def test_file_edits_apply_immediately(self, tmp_path):
        path = tmp_path / "members.txt"
        path.write_text("a@x.example\n")
        members = MembershipList(path, require=True)
        assert members.allows("a@x.example")
        assert not members.allows("b@x.example")
        members.add("b@x.example")
        assert members.allows("b@x.example")
        members.remove("b@x.example")
        assert not members.allows("b@x.example")

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "members.txt"
        path.write_text("# staff\n\na@x.example\n")
        assert MembershipList(path, require=True).entries() == {"a@x.example"}
