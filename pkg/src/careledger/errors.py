"""Domain error hierarchy.

Every error carries a stable machine-readable ``code`` used in ledger failure
markers and in HTTP error envelopes, so the same exception type can be
recovered after a transaction is replayed from disk.
"""
from __future__ import annotations


class NodeError(Exception):
    code = "Internal"
    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# ---- ledger admission ----

class BadSignature(NodeError):
    code = "BadSignature"
    http_status = 401


class UnknownSender(NodeError):
    code = "UnknownSender"
    http_status = 401


class MalformedPayload(NodeError):
    code = "MalformedPayload"
    http_status = 400


class StaleSequence(NodeError):
    code = "StaleSequence"
    http_status = 409


class NothingPending(NodeError):
    code = "NothingPending"
    http_status = 409


class LedgerCorrupt(NodeError):
    code = "LedgerCorrupt"
    http_status = 500


# ---- registry / access contracts ----

class DuplicateHandle(NodeError):
    code = "DuplicateHandle"
    http_status = 409


class NotCertified(NodeError):
    code = "NotCertified"
    http_status = 403


class MalformedKey(NodeError):
    code = "MalformedKey"
    http_status = 400


class NotFound(NodeError):
    code = "NotFound"
    http_status = 404


class UnknownHandle(NodeError):
    code = "UnknownHandle"
    http_status = 404


class UnknownIdentity(NodeError):
    code = "UnknownIdentity"
    http_status = 404


class UnknownGrantor(NodeError):
    code = "UnknownGrantor"
    http_status = 404


class UnknownGrantee(NodeError):
    code = "UnknownGrantee"
    http_status = 404


class EmptyToken(NodeError):
    code = "EmptyToken"
    http_status = 400


class InvalidTokenName(NodeError):
    code = "InvalidTokenName"
    http_status = 400


class TokenNameTaken(NodeError):
    code = "TokenNameTaken"
    http_status = 409


class TokenSenderMismatch(NodeError):
    code = "TokenSenderMismatch"
    http_status = 400


class NoSuchGrant(NodeError):
    code = "NoSuchGrant"
    http_status = 404


class NotGrantor(NodeError):
    code = "NotGrantor"
    http_status = 403


class RevokedAccess(NodeError):
    code = "RevokedAccess"
    http_status = 403


class UnknownOperation(NodeError):
    code = "UnknownOperation"
    http_status = 400


class ReplayRejected(NodeError):
    code = "ReplayRejected"
    http_status = 409


# ---- crypto ----

class EntropyUnavailable(NodeError):
    code = "EntropyUnavailable"
    http_status = 500


class MalformedPointer(NodeError):
    code = "MalformedPointer"
    http_status = 400


class DecryptionFailed(NodeError):
    code = "DecryptionFailed"
    http_status = 401


class SignatureInvalid(NodeError):
    code = "SignatureInvalid"
    http_status = 409


class ExpiredChallenge(NodeError):
    code = "ExpiredChallenge"
    http_status = 401


# ---- fhir ----

class InvalidPath(NodeError):
    code = "InvalidPath"
    http_status = 400

    def __init__(self, message: str = "", position: int = 0):
        super().__init__(message)
        self.position = position


class FetchFailed(NodeError):
    code = "FetchFailed"
    http_status = 502


class Expired(NodeError):
    code = "Expired"
    http_status = 410


class BadFixture(NodeError):
    code = "BadFixture"
    http_status = 500


# ---- server / cli ----

class Unauthorized(NodeError):
    code = "Unauthorized"
    http_status = 401


class AdminRequired(NodeError):
    code = "AdminRequired"
    http_status = 403


class BadConfig(NodeError):
    code = "BadConfig"
    http_status = 500


class ExistsAlready(NodeError):
    code = "ExistsAlready"
    http_status = 409


class BadPassphrase(NodeError):
    code = "BadPassphrase"
    http_status = 401


_BY_CODE = {cls.code: cls for cls in list(globals().values())
            if isinstance(cls, type) and issubclass(cls, NodeError)}


def by_code(code: str) -> type[NodeError]:
    """Map a stored failure code back to its exception class."""
    return _BY_CODE.get(code, NodeError)
