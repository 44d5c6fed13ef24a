"""Off-chain hub-and-spoke conditional payments over minimal mock ledgers.

The package implements signed payment promises gated by hashlocks and
timelocks, cumulative-credit receipts, an untrusted routing hub, wallet
agents with background event handlers, dispute-based settlement, and a
deterministic simulation harness for adversarial scenarios.
"""

from .channel import ChannelState
from .crypto import (
    SCHEME_A,
    SCHEME_B,
    MerkleProof,
    PrivateKey,
    PublicKey,
    Signature,
    generate_keypair,
    hash_commit,
    merkle_prove,
    merkle_root,
    merkle_verify,
    new_preimage,
    sign,
    verify,
)
from .ledger import ContractInstance, Ledger, LedgerEvent, replay_events
from .messages import (
    MODE_CONCURRENT,
    MODE_SERIALIZED,
    ChannelParams,
    ClosingRecord,
    PaymentProposal,
    Promise,
    Receipt,
    SecretMessage,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "ChannelState",
    "ClosingRecord",
    "ContractInstance",
    "Ledger",
    "LedgerEvent",
    "MerkleProof",
    "MODE_CONCURRENT",
    "MODE_SERIALIZED",
    "PaymentProposal",
    "PrivateKey",
    "Promise",
    "PublicKey",
    "Receipt",
    "SCHEME_A",
    "SCHEME_B",
    "SecretMessage",
    "Signature",
    "generate_keypair",
    "hash_commit",
    "merkle_prove",
    "merkle_root",
    "merkle_verify",
    "new_preimage",
    "replay_events",
    "sign",
    "verify",
]
