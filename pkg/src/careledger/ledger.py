"""Append-only, hash-chained transaction log.

A single validating writer admits transactions (signature check, sender
check, payload check), executes them against the contract engine, and seals
them into blocks.  Each block commits to its predecessor's hash and to a
digest over its ordered transaction digests, so any mutation of sealed
history is detectable by recomputation.  Blocks persist as one canonical
JSON line each in an append-only file, fsynced at seal time.

There is no consensus protocol here: one node validates, and tamper
evidence comes from the hash chain plus per-transaction signatures.  The
tx_root is a flat digest over the ordered transaction digests; the field
name leaves room for a Merkle upgrade without breaking the wire format.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Optional, Protocol

from . import crypto, errors
from .canonical import ZERO_DIGEST, b64u_decode, b64u_encode, canonical_bytes, digest_of, sha256_hex
from .clock import Clock

CONTRACTS = ("Registry", "Access")

TX_OK = "ok"
TX_FAILED = "failed"


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    contract: str
    operation: str
    payload: dict
    sender: str  # submitter's public signing key
    signature: str  # over canonical (contract, operation, payload, sequence)
    timestamp: int
    sequence: int
    status: str = TX_OK
    error: Optional[str] = None

    @staticmethod
    def signing_bytes(contract: str, operation: str, payload: dict, sequence: int) -> bytes:
        return canonical_bytes(
            {"contract": contract, "operation": operation, "payload": payload, "sequence": sequence}
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "tx_id": self.tx_id,
            "contract": self.contract,
            "operation": self.operation,
            "payload": self.payload,
            "sender": self.sender,
            "signature": self.signature,
            "timestamp": self.timestamp,
            "sequence": self.sequence,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Transaction":
        return cls(**record)

    def digest(self) -> str:
        return digest_of(self.to_record())


def transaction_id(contract: str, operation: str, payload: dict, sender: str,
                   sequence: int, timestamp: int) -> str:
    """Deterministic id: replaying the same admission inputs reproduces it."""
    return digest_of(
        {
            "contract": contract,
            "operation": operation,
            "payload": payload,
            "sender": sender,
            "sequence": sequence,
            "timestamp": timestamp,
        }
    )[:32]


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    tx_root: str
    transactions: tuple[Transaction, ...]
    sealed_at: int
    block_hash: str

    @staticmethod
    def compute_tx_root(transactions: tuple[Transaction, ...]) -> str:
        return sha256_hex("".join(tx.digest() for tx in transactions).encode("ascii"))

    @staticmethod
    def compute_hash(height: int, prev_hash: str, tx_root: str, sealed_at: int) -> str:
        return digest_of(
            {"height": height, "prev_hash": prev_hash, "tx_root": tx_root, "sealed_at": sealed_at}
        )

    @classmethod
    def seal(cls, height: int, prev_hash: str, transactions: tuple[Transaction, ...],
             sealed_at: int) -> "Block":
        tx_root = cls.compute_tx_root(transactions)
        return cls(
            height=height,
            prev_hash=prev_hash,
            tx_root=tx_root,
            transactions=transactions,
            sealed_at=sealed_at,
            block_hash=cls.compute_hash(height, prev_hash, tx_root, sealed_at),
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "tx_root": self.tx_root,
            "transactions": [tx.to_record() for tx in self.transactions],
            "sealed_at": self.sealed_at,
            "block_hash": self.block_hash,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Block":
        return cls(
            height=record["height"],
            prev_hash=record["prev_hash"],
            tx_root=record["tx_root"],
            transactions=tuple(Transaction.from_record(t) for t in record["transactions"]),
            sealed_at=record["sealed_at"],
            block_hash=record["block_hash"],
        )


@dataclass
class ValidationReport:
    ok: bool
    height: Optional[int] = None
    reason: Optional[str] = None


class Engine(Protocol):
    """Contract-side hooks the ledger calls during admission."""

    def check_sender(self, sender: str, contract: str, operation: str) -> None: ...
    def check_payload(self, contract: str, operation: str, payload: dict) -> None: ...
    def execute(self, tx: Transaction) -> tuple[str, Optional[str], Any]: ...


@dataclass
class QueryFilter:
    contract: Optional[str] = None
    operation: Optional[str] = None
    identity: Optional[str] = None
    since_sequence: Optional[int] = None


class Ledger:
    """Single-writer chain: all mutation funnels through an internal lock;
    reads operate on immutable sealed blocks and a snapshot of pending."""

    def __init__(self, path: str | Path, engine: Engine, clock: Clock, block_size: int = 1):
        self._path = Path(path)
        self._engine = engine
        self._clock = clock
        self._block_size = max(1, int(block_size))
        self._lock = threading.RLock()
        self._blocks: list[Block] = []
        self._pending: list[Transaction] = []
        self._next_sequence = 0
        self._on_admit: list[Callable[[Transaction], None]] = []

        if self._path.exists() and self._path.stat().st_size > 0:
            report = self.validate_file(self._path)
            if not report.ok:
                raise errors.LedgerCorrupt(
                    f"ledger file fails validation at height {report.height}: {report.reason}"
                )
            self._blocks = self._read_blocks(self._path)
            self._next_sequence = sum(len(b.transactions) for b in self._blocks)
        else:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            genesis = Block.seal(0, ZERO_DIGEST, (), self._clock.now())
            self._blocks = [genesis]
            self._append_block(genesis)

    # -- admission ----------------------------------------------------------

    @property
    def next_sequence(self) -> int:
        return self._next_sequence

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    def on_admit(self, hook: Callable[[Transaction], None]) -> None:
        self._on_admit.append(hook)

    def submit_transaction(self, tx: Transaction) -> int:
        """Admit a fully formed, signed transaction.

        The signature must cover the sequence the chain will assign; callers
        obtain it from ``next_sequence`` (under ``lock`` when racing).
        """
        with self._lock:
            if tx.contract not in CONTRACTS:
                raise errors.MalformedPayload(f"unknown contract {tx.contract!r}")
            if tx.sequence != self._next_sequence:
                raise errors.StaleSequence(
                    f"signed sequence {tx.sequence} but next is {self._next_sequence}"
                )
            if not _signature_ok(tx):
                raise errors.BadSignature("transaction signature does not verify")
            self._engine.check_sender(tx.sender, tx.contract, tx.operation)
            self._engine.check_payload(tx.contract, tx.operation, tx.payload)

            tx = replace(
                tx,
                tx_id=transaction_id(
                    tx.contract, tx.operation, tx.payload, tx.sender, tx.sequence, tx.timestamp
                ),
                status=TX_OK,
                error=None,
            )
            status, error_code, _delta = self._engine.execute(tx)
            tx = replace(tx, status=status, error=error_code)

            self._pending.append(tx)
            self._next_sequence += 1
            if len(self._pending) >= self._block_size:
                self._seal_locked()
            for hook in self._on_admit:
                hook(tx)
            return tx.sequence

    def submit(self, contract: str, operation: str, payload: dict, sender: str,
               signer: Callable[[bytes], bytes], timestamp: Optional[int] = None) -> Transaction:
        """Build, sign, and admit a transaction in one step under the writer
        lock, so the signed sequence can never race another submission."""
        with self._lock:
            seq = self._next_sequence
            ts = self._clock.now() if timestamp is None else timestamp
            signature = b64u_encode(
                signer(Transaction.signing_bytes(contract, operation, payload, seq))
            )
            tx = Transaction(
                tx_id="",
                contract=contract,
                operation=operation,
                payload=payload,
                sender=sender,
                signature=signature,
                timestamp=ts,
                sequence=seq,
            )
            self.submit_transaction(tx)
            admitted = self._pending[-1] if self._pending else self._blocks[-1].transactions[-1]
            assert admitted.sequence == seq
            return admitted

    # -- sealing ------------------------------------------------------------

    def seal_block(self) -> Block:
        with self._lock:
            if not self._pending:
                raise errors.NothingPending("no admitted transactions to seal")
            return self._seal_locked()

    def _seal_locked(self) -> Block:
        tip = self._blocks[-1]
        block = Block.seal(
            height=tip.height + 1,
            prev_hash=tip.block_hash,
            transactions=tuple(self._pending),
            sealed_at=self._clock.now(),
        )
        self._append_block(block)
        self._blocks.append(block)
        self._pending = []
        return block

    def _append_block(self, block: Block) -> None:
        line = canonical_bytes(block.to_record()) + b"\n"
        with open(self._path, "ab") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    # -- reads ----------------------------------------------------------------

    @property
    def blocks(self) -> list[Block]:
        return list(self._blocks)

    @property
    def pending(self) -> list[Transaction]:
        return list(self._pending)

    @property
    def height(self) -> int:
        return self._blocks[-1].height

    def all_transactions(self) -> Iterator[Transaction]:
        for block in self._blocks:
            yield from block.transactions
        yield from list(self._pending)

    def transaction_at(self, sequence: int) -> Transaction:
        for tx in self.all_transactions():
            if tx.sequence == sequence:
                return tx
        raise errors.NotFound(f"no transaction with sequence {sequence}")

    def query_log(self, flt: Optional[QueryFilter] = None, **kwargs) -> list[Transaction]:
        flt = flt or QueryFilter(**kwargs)
        out = []
        for tx in self.all_transactions():
            if flt.contract is not None and tx.contract != flt.contract:
                continue
            if flt.operation is not None and tx.operation != flt.operation:
                continue
            if flt.identity is not None and flt.identity not in identities_in(tx):
                continue
            if flt.since_sequence is not None and tx.sequence < flt.since_sequence:
                continue
            out.append(tx)
        return out

    # -- validation -----------------------------------------------------------

    def validate_chain(self) -> ValidationReport:
        return _validate_blocks(self._blocks)

    @classmethod
    def validate_file(cls, path: str | Path) -> ValidationReport:
        """Validate the persisted chain; parse failures are violations, not
        exceptions, so a tampered file always yields ok=False."""
        try:
            blocks = cls._read_blocks(Path(path))
        except _ParseFailure as exc:
            return ValidationReport(ok=False, height=exc.height, reason=str(exc))
        return _validate_blocks(blocks)

    @staticmethod
    def _read_blocks(path: Path) -> list[Block]:
        blocks = []
        raw = path.read_bytes()
        for i, line in enumerate(raw.split(b"\n")):
            if not line:
                continue
            try:
                record = json.loads(line.decode("utf-8"))
                blocks.append(Block.from_record(record))
            except Exception as exc:
                raise _ParseFailure(i, f"unparseable block line: {exc}") from exc
        return blocks


class _ParseFailure(Exception):
    def __init__(self, height: int, message: str):
        super().__init__(message)
        self.height = height


def _signature_ok(tx: Transaction) -> bool:
    try:
        public = crypto.load_public_key(tx.sender)
        return crypto.verify(
            public,
            b64u_decode(tx.signature),
            Transaction.signing_bytes(tx.contract, tx.operation, tx.payload, tx.sequence),
        )
    except (errors.MalformedKey, ValueError):
        return False


def _validate_blocks(blocks: list[Block]) -> ValidationReport:
    if not blocks:
        return ValidationReport(ok=False, height=0, reason="chain has no genesis block")
    expected_sequence = 0
    for i, block in enumerate(blocks):
        if block.height != i:
            return ValidationReport(ok=False, height=i, reason=f"height {block.height} at index {i}")
        if i == 0:
            if block.prev_hash != ZERO_DIGEST:
                return ValidationReport(ok=False, height=0, reason="genesis prev_hash not zero")
        else:
            if block.prev_hash != blocks[i - 1].block_hash:
                return ValidationReport(ok=False, height=i, reason="prev_hash does not match predecessor")
            if not block.transactions:
                return ValidationReport(ok=False, height=i, reason="empty block above genesis")
        if Block.compute_tx_root(block.transactions) != block.tx_root:
            return ValidationReport(ok=False, height=i, reason="tx_root does not recompute")
        if Block.compute_hash(block.height, block.prev_hash, block.tx_root, block.sealed_at) != block.block_hash:
            return ValidationReport(ok=False, height=i, reason="block_hash does not recompute")
        for tx in block.transactions:
            if tx.sequence != expected_sequence:
                return ValidationReport(
                    ok=False, height=i, reason=f"sequence {tx.sequence}, expected {expected_sequence}"
                )
            expected_sequence += 1
            if tx.contract not in CONTRACTS:
                return ValidationReport(ok=False, height=i, reason=f"unknown contract {tx.contract!r}")
            if not _signature_ok(tx):
                return ValidationReport(
                    ok=False, height=i, reason=f"signature invalid for sequence {tx.sequence}"
                )
    return ValidationReport(ok=True)


def identities_in(tx: Transaction) -> set[str]:
    """Every identity key a transaction involves; used by log filters and
    the per-subscriber audit scope."""
    out = {tx.sender}
    for key in ("actor", "grantee", "grantor", "encryption_public_key"):
        value = tx.payload.get(key)
        if isinstance(value, str) and value:
            out.add(value)
    return out
