"""Off-chain protocol message types.

A payment is negotiated with four messages: the payee's PaymentProposal
(the invoice carrying a hash commitment), the payer's signed Promise
(conditional on the secret, before an expiry tick), the payee's
SecretMessage revealing the preimage, and the payer's signed Receipt
acknowledging the new cumulative credit. Signatures always cover the
message's canonical encoding, never an ad-hoc serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from . import codec
from .crypto import DIGEST_LEN, PublicKey, Signature

MODE_SERIALIZED = "SERIALIZED"
MODE_CONCURRENT = "CONCURRENT"
MODES = (MODE_SERIALIZED, MODE_CONCURRENT)


@dataclass(frozen=True)
class ChannelParams:
    """Contract parameters fixed at deployment for one client-hub channel."""

    channel_id: str
    ledger_id: str
    client_id: str
    hub_id: str
    client_pk: PublicKey
    hub_pk: PublicKey
    scheme: str
    mode: str
    claim_margin_delta: int
    dispute_window: int
    penalty_bps: int = 1000

    def __post_init__(self):
        if self.claim_margin_delta < 1:
            raise ValueError("claim_margin_delta must be >= 1")
        if self.dispute_window < 1:
            raise ValueError("dispute_window must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode}")
        if self.client_pk.scheme != self.scheme or self.hub_pk.scheme != self.scheme:
            raise ValueError("channel keys must use the channel scheme")

    def party_pk(self, party: str) -> PublicKey:
        if party == self.client_id:
            return self.client_pk
        if party == self.hub_id:
            return self.hub_pk
        raise KeyError(f"{party} is not a member of channel {self.channel_id}")

    def other_party(self, party: str) -> str:
        if party == self.client_id:
            return self.hub_id
        if party == self.hub_id:
            return self.client_id
        raise KeyError(f"{party} is not a member of channel {self.channel_id}")

    @cached_property
    def canonical_bytes(self) -> bytes:
        return codec.canonical_encode(codec.TAG_PARAMS, self.to_jsonable())

    def to_jsonable(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "ledger_id": self.ledger_id,
            "client_id": self.client_id,
            "hub_id": self.hub_id,
            "client_pk": self.client_pk.data.hex(),
            "hub_pk": self.hub_pk.data.hex(),
            "scheme": self.scheme,
            "mode": self.mode,
            "claim_margin_delta": self.claim_margin_delta,
            "dispute_window": self.dispute_window,
            "penalty_bps": self.penalty_bps,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ChannelParams":
        scheme = obj["scheme"]
        return cls(
            channel_id=obj["channel_id"],
            ledger_id=obj["ledger_id"],
            client_id=obj["client_id"],
            hub_id=obj["hub_id"],
            client_pk=PublicKey(scheme, bytes.fromhex(obj["client_pk"])),
            hub_pk=PublicKey(scheme, bytes.fromhex(obj["hub_pk"])),
            scheme=scheme,
            mode=obj["mode"],
            claim_margin_delta=int(obj["claim_margin_delta"]),
            dispute_window=int(obj["dispute_window"]),
            penalty_bps=int(obj["penalty_bps"]),
        )


@dataclass(frozen=True)
class PaymentProposal:
    """Invoice from payee to payer; the hashlock commits to the payee's secret."""

    proposal_id: str
    amount: int
    hashlock: bytes
    expiry: int
    payee_route: str

    def __post_init__(self):
        if len(self.hashlock) != DIGEST_LEN:
            raise ValueError("hashlock must be a 32-byte digest")

    @cached_property
    def canonical_bytes(self) -> bytes:
        return codec.canonical_encode(codec.TAG_PROPOSAL, self.to_jsonable())

    def to_jsonable(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "amount": self.amount,
            "hashlock": self.hashlock.hex(),
            "expiry": self.expiry,
            "payee_route": self.payee_route,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "PaymentProposal":
        return cls(
            proposal_id=obj["proposal_id"],
            amount=int(obj["amount"]),
            hashlock=bytes.fromhex(obj["hashlock"]),
            expiry=int(obj["expiry"]),
            payee_route=obj["payee_route"],
        )


@dataclass(frozen=True)
class Promise:
    """Signed conditional payment on one channel direction."""

    channel_id: str
    sender: str
    index: int
    amount: int
    hashlock: bytes
    expiry: int
    sender_sig: Signature | None = field(default=None, compare=False)

    @cached_property
    def signing_bytes(self) -> bytes:
        # Signature covers every field except itself.
        return codec.canonical_encode(
            codec.TAG_PROMISE,
            {
                "channel_id": self.channel_id,
                "sender": self.sender,
                "index": self.index,
                "amount": self.amount,
                "hashlock": self.hashlock.hex(),
                "expiry": self.expiry,
            },
        )

    @cached_property
    def digest(self) -> bytes:
        """Leaf digest used by the pending-promise accumulator."""
        from .crypto import sha256

        return sha256(self.signing_bytes)

    @cached_property
    def leaf_hash(self) -> bytes:
        from .crypto import sha256

        return sha256(b"\x00" + self.digest)

    def with_sig(self, sig: Signature) -> "Promise":
        signed = Promise(self.channel_id, self.sender, self.index, self.amount,
                         self.hashlock, self.expiry, sig)
        # identical fields, so the canonical caches carry over
        for key in ("signing_bytes", "digest", "leaf_hash"):
            if key in self.__dict__:
                signed.__dict__[key] = self.__dict__[key]
        return signed

    def to_jsonable(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "sender": self.sender,
            "index": self.index,
            "amount": self.amount,
            "hashlock": self.hashlock.hex(),
            "expiry": self.expiry,
            "sig": self.sender_sig.data.hex() if self.sender_sig else None,
            "sig_scheme": self.sender_sig.scheme if self.sender_sig else None,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "Promise":
        sig = None
        if obj.get("sig"):
            sig = Signature(obj["sig_scheme"], bytes.fromhex(obj["sig"]))
        return cls(
            channel_id=obj["channel_id"],
            sender=obj["sender"],
            index=int(obj["index"]),
            amount=int(obj["amount"]),
            hashlock=bytes.fromhex(obj["hashlock"]),
            expiry=int(obj["expiry"]),
            sender_sig=sig,
        )


@dataclass(frozen=True)
class SecretMessage:
    """Reveals the preimage that unlocks one promised payment."""

    channel_id: str
    hashlock: bytes
    preimage: bytes

    @cached_property
    def canonical_bytes(self) -> bytes:
        return codec.canonical_encode(codec.TAG_SECRET, self.to_jsonable())

    def to_jsonable(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "hashlock": self.hashlock.hex(),
            "preimage": self.preimage.hex(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "SecretMessage":
        return cls(
            channel_id=obj["channel_id"],
            hashlock=bytes.fromhex(obj["hashlock"]),
            preimage=bytes.fromhex(obj["preimage"]),
        )


@dataclass(frozen=True)
class Receipt:
    """Signed cumulative-credit acknowledgment, issued by the promise sender.

    ``cumulative_credit`` is the total the issuer now owes on this direction.
    In CONCURRENT mode ``pending_root`` commits to the issuer's still
    unresolved outgoing promises; SERIALIZED receipts carry the zero root.
    """

    channel_id: str
    issuer: str
    index: int
    cumulative_credit: int
    pending_root: bytes
    issuer_sig: Signature | None = field(default=None, compare=False)

    @cached_property
    def signing_bytes(self) -> bytes:
        return codec.canonical_encode(
            codec.TAG_RECEIPT,
            {
                "channel_id": self.channel_id,
                "issuer": self.issuer,
                "index": self.index,
                "cumulative_credit": self.cumulative_credit,
                "pending_root": self.pending_root.hex(),
            },
        )

    def with_sig(self, sig: Signature) -> "Receipt":
        signed = Receipt(self.channel_id, self.issuer, self.index,
                         self.cumulative_credit, self.pending_root, sig)
        if "signing_bytes" in self.__dict__:
            signed.__dict__["signing_bytes"] = self.__dict__["signing_bytes"]
        return signed

    def to_jsonable(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "issuer": self.issuer,
            "index": self.index,
            "cumulative_credit": self.cumulative_credit,
            "pending_root": self.pending_root.hex(),
            "sig": self.issuer_sig.data.hex() if self.issuer_sig else None,
            "sig_scheme": self.issuer_sig.scheme if self.issuer_sig else None,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "Receipt":
        sig = None
        if obj.get("sig"):
            sig = Signature(obj["sig_scheme"], bytes.fromhex(obj["sig"]))
        return cls(
            channel_id=obj["channel_id"],
            issuer=obj["issuer"],
            index=int(obj["index"]),
            cumulative_credit=int(obj["cumulative_credit"]),
            pending_root=bytes.fromhex(obj["pending_root"]),
            issuer_sig=sig,
        )


@dataclass(frozen=True)
class ClosingRecord:
    """Final balances both parties co-sign for a cooperative close."""

    channel_id: str
    balances: tuple[tuple[str, int], ...]  # ((party, amount), ...) sorted by party

    @staticmethod
    def make(channel_id: str, balances: dict[str, int]) -> "ClosingRecord":
        return ClosingRecord(channel_id, tuple(sorted(balances.items())))

    @property
    def balance_map(self) -> dict[str, int]:
        return dict(self.balances)

    @cached_property
    def signing_bytes(self) -> bytes:
        return codec.canonical_encode(
            codec.TAG_CLOSING,
            {"channel_id": self.channel_id, "balances": dict(self.balances)},
        )

    def to_jsonable(self) -> dict:
        return {"channel_id": self.channel_id, "balances": dict(self.balances)}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ClosingRecord":
        return cls.make(obj["channel_id"], {k: int(v) for k, v in obj["balances"].items()})
