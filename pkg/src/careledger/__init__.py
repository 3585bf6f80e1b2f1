"""careledger: a self-contained clinical data-sharing node.

Providers register public-key health identities on an append-only,
hash-chained ledger, exchange access to off-chain FHIR resources as
sign-then-encrypt tokens over reference pointers, and consume shared data
through an HTTP portal — with every grant, revocation, and read logged as a
ledger transaction.
"""

__version__ = "0.1.0"
