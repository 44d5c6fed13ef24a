"""The routing hub: registry, channel pairing, promise relay, persistence.

The hub is trusted for availability only. Every promise it relays is checked
against the sender's channel capacity, every outgoing promise expires one
safety margin before its incoming counterpart, and a background tick claims
incoming promises on-chain whenever a sender withholds the final receipt.
All ledger-derived state transitions are driven by observed ledger events,
never by the submission call itself, so crash recovery replays to the same
state the live hub reached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import crypto
from .channel import ChannelState, close_balances
from .crypto import PrivateKey, PublicKey, generate_keypair
from .errors import HubpayError, RecoveryError
from .ledger import (
    EV_CLAIMED,
    EV_CLOSED,
    EV_DEPOSITED,
    EV_DISPUTE_OPENED,
    EV_RECEIPT_SUBMITTED,
    Ledger,
    STATUS_CLOSING,
    STATUS_OPEN,
)
from .messages import (
    MODE_CONCURRENT,
    MODES,
    ChannelParams,
    ClosingRecord,
    Promise,
    Receipt,
    SecretMessage,
)
from .wire import (
    K_CLOSE_OK,
    K_CLOSE_REQUEST,
    K_PROMISE,
    K_PROPOSAL_RELAY,
    K_RECEIPT,
    K_REGISTER,
    K_REGISTER_OK,
    K_SECRET,
    WireMessage,
    error_message,
)

ROUTE_AWAIT_SECRET = "AWAIT_SECRET"
ROUTE_SECRET_HELD = "SECRET_HELD"
ROUTE_SETTLED_OUT = "SETTLED_OUT"   # incoming leg recovered on-chain
ROUTE_SETTLED_IN = "SETTLED_IN"     # incoming leg settled off-chain
ROUTE_EXPIRED = "EXPIRED"

TERMINAL_ROUTES = {ROUTE_SETTLED_OUT, ROUTE_SETTLED_IN, ROUTE_EXPIRED}


@dataclass
class HubConfig:
    hub_id: str = "hub"
    fee_bps: int = 0
    claim_margin_delta: int = 50
    dispute_window: int = 100
    penalty_bps: int = 1000
    channel_float: int = 1_000_000
    key_seed: bytes = b"hub-key-seed"

    def to_jsonable(self) -> dict:
        return {
            "hub_id": self.hub_id,
            "fee_bps": self.fee_bps,
            "claim_margin_delta": self.claim_margin_delta,
            "dispute_window": self.dispute_window,
            "penalty_bps": self.penalty_bps,
            "channel_float": self.channel_float,
            "key_seed": self.key_seed.hex(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "HubConfig":
        return cls(
            hub_id=obj["hub_id"],
            fee_bps=int(obj["fee_bps"]),
            claim_margin_delta=int(obj["claim_margin_delta"]),
            dispute_window=int(obj["dispute_window"]),
            penalty_bps=int(obj["penalty_bps"]),
            channel_float=int(obj["channel_float"]),
            key_seed=bytes.fromhex(obj["key_seed"]),
        )


@dataclass
class Registration:
    client_id: str
    ledger_id: str
    mode: str
    channel_id: str

    def to_jsonable(self) -> dict:
        return {"client_id": self.client_id, "ledger_id": self.ledger_id,
                "mode": self.mode, "channel_id": self.channel_id}


@dataclass
class RouteContext:
    payment_id: str
    hashlock: bytes
    in_channel: str
    out_channel: str
    in_promise: Promise
    out_promise: Promise
    state: str = ROUTE_AWAIT_SECRET
    preimage: bytes | None = None
    payee_receipt: Receipt | None = None
    claim_submitted: bool = False

    def to_jsonable(self) -> dict:
        return {
            "payment_id": self.payment_id,
            "hashlock": self.hashlock.hex(),
            "in_channel": self.in_channel,
            "out_channel": self.out_channel,
            "in_promise": self.in_promise.to_jsonable(),
            "out_promise": self.out_promise.to_jsonable(),
            "state": self.state,
            "preimage": self.preimage.hex() if self.preimage else None,
            "payee_receipt": self.payee_receipt.to_jsonable() if self.payee_receipt else None,
            "claim_submitted": self.claim_submitted,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "RouteContext":
        return cls(
            payment_id=obj["payment_id"],
            hashlock=bytes.fromhex(obj["hashlock"]),
            in_channel=obj["in_channel"],
            out_channel=obj["out_channel"],
            in_promise=Promise.from_jsonable(obj["in_promise"]),
            out_promise=Promise.from_jsonable(obj["out_promise"]),
            state=obj["state"],
            preimage=bytes.fromhex(obj["preimage"]) if obj["preimage"] else None,
            payee_receipt=(Receipt.from_jsonable(obj["payee_receipt"])
                           if obj["payee_receipt"] else None),
            claim_submitted=bool(obj["claim_submitted"]),
        )


class HubStore:
    """Persistence backend: latest snapshot plus the journal since it."""

    def __init__(self):
        self.snapshot: dict | None = None
        self.journal: list[dict] = []

    def append(self, entry: dict) -> None:
        self.journal.append(entry)

    def set_snapshot(self, snap: dict) -> None:
        self.snapshot = snap
        self.journal = []


class HubCore:
    """Transport-independent hub logic.

    ``handle_message``/``hub_tick`` return an outbox of (client_id, message)
    pairs; the caller (simulation bus or socket server) delivers them.
    """

    def __init__(self, config: HubConfig, ledgers: dict[str, Ledger],
                 store: HubStore | None = None):
        self.config = config
        self.ledgers = ledgers
        self.store = store or HubStore()
        self.keys: dict[str, tuple[PrivateKey, PublicKey]] = {}
        for ledger_id, ledger in sorted(ledgers.items()):
            self.keys[ledger_id] = generate_keypair(
                ledger.scheme, config.key_seed + ledger_id.encode())
        self.registry: dict[str, Registration] = {}
        self.channels: dict[str, ChannelState] = {}
        self.routes: dict[bytes, RouteContext] = {}
        # non-terminal route keys, so per-tick sweeps stay O(in-flight)
        self.active_routes: set[bytes] = set()
        self.cursors: dict[str, int] = {lid: 0 for lid in sorted(ledgers)}
        self.channel_counter = 0
        self.fees_accrued = 0
        self.closed_channels: dict[str, dict] = {}
        # claims this hub performed: hashlock -> promise jsonable (for proofs)
        self.claims_made: dict[bytes, Promise] = {}
        self.finalize_submitted: set[str] = set()
        self.trace: list[dict] = []
        self.replaying = False
        self._tick_outbox: list[tuple[str, WireMessage]] = []
        self._handlers = {
            K_REGISTER: self._on_register,
            K_PROPOSAL_RELAY: self._on_proposal_relay,
            K_PROMISE: self._on_promise,
            K_SECRET: self._on_secret,
            K_RECEIPT: self._on_receipt,
            K_CLOSE_REQUEST: self._on_close_request,
        }
        # scripted deviations from the honest state machine; empty = honest
        self.behaviors: set[str] = set()

    # -- helpers ---------------------------------------------------------------

    def _note(self, action: str, **info) -> None:
        entry = {"action": action}
        entry.update(info)
        self.trace.append(entry)

    def sk_for(self, ledger_id: str) -> PrivateKey:
        return self.keys[ledger_id][0]

    def pk_for(self, ledger_id: str) -> PublicKey:
        return self.keys[ledger_id][1]

    def channel_of(self, client_id: str) -> ChannelState | None:
        reg = self.registry.get(client_id)
        if reg is None:
            return None
        return self.channels.get(reg.channel_id)

    def ledger_of_channel(self, channel_id: str) -> Ledger:
        return self.ledgers[self.channels[channel_id].params.ledger_id]

    def _journal(self, entry: dict) -> None:
        if not self.replaying:
            self.store.append(entry)

    def _ledger_call(self, fn, *args, **kwargs):
        """Submit a ledger operation unless replaying the journal (the live
        run already wrote it; state converges via event polling)."""
        if self.replaying:
            return None
        return fn(*args, **kwargs)

    # -- message handling ---------------------------------------------------------

    def handle_message(self, src: str, msg: WireMessage, now: int) -> list[tuple[str, WireMessage]]:
        self._journal({"t": "msg", "now": now, "src": src,
                       "kind": msg.kind, "body": msg.body})
        handler = self._handlers.get(msg.kind)
        if handler is None:
            return [(src, error_message("EncodingError", f"unhandled kind {msg.kind}"))]
        try:
            return handler(src, msg.body, now)
        except HubpayError as exc:
            return [(src, error_message(exc.code, exc.detail,
                                        payment_id=msg.body.get("payment_id")))]

    def _on_register(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        client_id = body["client_id"]
        ledger_id = body["ledger_id"]
        mode = body.get("mode", "SERIALIZED")
        if client_id in self.registry:
            return [(src, error_message("AlreadyRegistered", client_id))]
        ledger = self.ledgers.get(ledger_id)
        if ledger is None:
            return [(src, error_message("NotFound", f"ledger {ledger_id}"))]
        if body["scheme"] != ledger.scheme:
            return [(src, error_message("SchemeError",
                                        f"{body['scheme']} != ledger scheme {ledger.scheme}"))]
        if mode not in MODES:
            return [(src, error_message("EncodingError", f"unknown mode {mode}"))]
        client_pk = PublicKey(body["scheme"], bytes.fromhex(body["pk"]))
        self.channel_counter += 1
        channel_id = f"ch-{self.channel_counter:04d}-{client_id}"
        params = ChannelParams(
            channel_id=channel_id,
            ledger_id=ledger_id,
            client_id=client_id,
            hub_id=self.config.hub_id,
            client_pk=client_pk,
            hub_pk=self.pk_for(ledger_id),
            scheme=ledger.scheme,
            mode=mode,
            claim_margin_delta=self.config.claim_margin_delta,
            dispute_window=self.config.dispute_window,
            penalty_bps=self.config.penalty_bps,
        )
        self._ledger_call(ledger.deploy_contract, params, self.config.hub_id)
        if self.config.channel_float > 0:
            self._ledger_call(ledger.deposit, channel_id, self.config.hub_id,
                              self.config.channel_float)
        self.registry[client_id] = Registration(client_id, ledger_id, mode, channel_id)
        self.channels[channel_id] = ChannelState(params=params, owner=self.config.hub_id)
        self._note("register", client=client_id, channel=channel_id)
        return [(src, WireMessage(K_REGISTER_OK, {
            "channel_id": channel_id,
            "params": params.to_jsonable(),
            "fee_bps": self.config.fee_bps,
        }))]

    def _on_proposal_relay(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        target = body.get("to")
        if target not in self.registry:
            return [(src, error_message("NoRoute", f"unknown client {target}",
                                        payment_id=body.get("payment_id")))]
        return [(target, WireMessage(K_PROPOSAL_RELAY, body))]

    def _on_promise(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        payment_id = body.get("payment_id")
        promise = Promise.from_jsonable(body["promise"])
        payee = body.get("payee")
        in_state = self.channel_of(src)
        if (in_state is None or in_state.params.channel_id != promise.channel_id
                or in_state.params.channel_id in self.closed_channels):
            return [(src, error_message("NoRoute", "unknown or closed sender channel",
                                        payment_id=payment_id))]
        delta = self.config.claim_margin_delta
        reason = in_state.verify_promise(promise, now, min_margin=2 * delta)
        if reason is not None:
            code = "ExpiryTooSoon" if reason == "ExpiryTooSoon" else reason
            self._note("promise_rejected", payment=payment_id, reason=reason, sender=src)
            return [(src, error_message(code, "promise rejected", payment_id=payment_id))]
        out_state = self.channel_of(payee)
        if out_state is None or out_state.params.channel_id in self.closed_channels:
            return [(src, error_message("NoRoute", f"no open channel for {payee}",
                                        payment_id=payment_id))]
        fee = promise.amount * self.config.fee_bps // 10000
        out_amount = promise.amount - fee
        if out_amount < 1:
            return [(src, error_message("InvalidAmount", "amount too small after fees",
                                        payment_id=payment_id))]
        if promise.hashlock in self.routes:
            return [(src, error_message("DuplicateHashlock", "route exists",
                                        payment_id=payment_id))]
        if out_amount > out_state.available_balance():
            self._note("liquidity_exhausted", payment=payment_id, payee=payee)
            return [(src, error_message("HubLiquidityExhausted", "payee channel underfunded",
                                        payment_id=payment_id))]
        out_expiry = promise.expiry - delta
        try:
            if "OVERSPEND_PROMISE" in self.behaviors:
                # sign a forwarded promise far beyond the route's backing,
                # bypassing the hub's own capacity accounting
                out_amount = out_state.available_balance() + promise.amount + 1_000
                outgoing = Promise(out_state.params.channel_id, self.config.hub_id,
                                   out_state.next_out_index, out_amount,
                                   promise.hashlock, out_expiry)
                outgoing = outgoing.with_sig(crypto.sign(
                    self.sk_for(out_state.params.ledger_id), outgoing.signing_bytes))
                out_state.next_out_index += 1
            else:
                outgoing = out_state.promise_raw(
                    out_amount, promise.hashlock, out_expiry,
                    self.sk_for(out_state.params.ledger_id), now)
        except HubpayError as exc:
            return [(src, error_message(exc.code, exc.detail, payment_id=payment_id))]
        in_state.accept_promise(promise)
        self.routes[promise.hashlock] = RouteContext(
            payment_id=payment_id or promise.hashlock.hex()[:12],
            hashlock=promise.hashlock,
            in_channel=in_state.params.channel_id,
            out_channel=out_state.params.channel_id,
            in_promise=promise,
            out_promise=outgoing,
        )
        self.active_routes.add(promise.hashlock)
        self._note("routed", payment=payment_id, sender=src, payee=payee,
                   amount=promise.amount, fee=fee)
        return [(payee, WireMessage(K_PROMISE, {
            "payment_id": payment_id,
            "promise": outgoing.to_jsonable(),
        }))]

    # Adversary hooks; the honest hub always participates.

    def _should_send_receipt(self, ctx: RouteContext) -> bool:
        return "WITHHOLD_RECEIPT" not in self.behaviors

    def _should_forward_secret(self, ctx: RouteContext) -> bool:
        return "WITHHOLD_SECRET" not in self.behaviors

    def _on_secret(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        payment_id = body.get("payment_id")
        secret = SecretMessage.from_jsonable(body["secret"])
        ctx = self.routes.get(secret.hashlock)
        if ctx is None:
            return [(src, error_message("UnknownPromise", "no route for hashlock",
                                        payment_id=payment_id))]
        out_state = self.channels[ctx.out_channel]
        if out_state.params.client_id != src:
            return [(src, error_message("UnknownPromise", "secret from wrong party",
                                        payment_id=payment_id))]
        outbox: list[tuple[str, WireMessage]] = []
        if ctx.state == ROUTE_EXPIRED:
            return [(src, error_message("Expired", "route expired",
                                        payment_id=payment_id))]
        if ctx.state == ROUTE_AWAIT_SECRET:
            if now >= ctx.out_promise.expiry:
                return [(src, error_message("Expired", "outgoing promise expired",
                                            payment_id=payment_id))]
            receipt = out_state.accept_secret(
                SecretMessage(ctx.out_channel, secret.hashlock, secret.preimage),
                self.sk_for(out_state.params.ledger_id), now)
            ctx.preimage = secret.preimage
            ctx.payee_receipt = receipt
            ctx.state = ROUTE_SECRET_HELD
            self._note("secret_accepted", payment=ctx.payment_id)
        if ctx.state in (ROUTE_SECRET_HELD, ROUTE_SETTLED_IN, ROUTE_SETTLED_OUT):
            # idempotent: retransmitted secrets re-trigger the same replies
            if ctx.payee_receipt is not None and self._should_send_receipt(ctx):
                outbox.append((src, WireMessage(K_RECEIPT, {
                    "payment_id": ctx.payment_id,
                    "receipt": ctx.payee_receipt.to_jsonable(),
                })))
            if ctx.state == ROUTE_SECRET_HELD and self._should_forward_secret(ctx):
                outbox.append(self._forward_secret(ctx))
        return outbox

    def _forward_secret(self, ctx: RouteContext) -> tuple[str, WireMessage]:
        """Reveal the held preimage to the sender; the incoming channel books
        now await the sender's receipt."""
        in_state = self.channels[ctx.in_channel]
        in_state.secrets[ctx.hashlock] = ctx.preimage
        if ctx.hashlock in in_state.pending_in:
            in_state.reveal_secret(ctx.hashlock)
        sender = in_state.params.client_id
        return (sender, WireMessage(K_SECRET, {
            "payment_id": ctx.payment_id,
            "secret": SecretMessage(ctx.in_channel, ctx.hashlock,
                                    ctx.preimage).to_jsonable(),
        }))

    def _on_receipt(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        receipt = Receipt.from_jsonable(body["receipt"])
        state = self.channel_of(src)
        if state is None or state.params.channel_id != receipt.channel_id:
            return [(src, error_message("NoRoute", "unknown channel"))]
        reason = state.verify_receipt(receipt)
        if reason is not None:
            self._note("receipt_rejected", sender=src, reason=reason)
            return [(src, error_message(reason, "receipt rejected"))]
        resolved = state.apply_receipt(receipt)
        for hashlock in resolved:
            ctx = self.routes.get(hashlock)
            if ctx is not None and ctx.state == ROUTE_SECRET_HELD:
                self._route_done(ctx, ROUTE_SETTLED_IN)
                self.fees_accrued += ctx.in_promise.amount - ctx.out_promise.amount
                self._note("settled_in", payment=ctx.payment_id)
        return []

    def _accept_close(self, state: ChannelState, balances: dict[str, int]) -> bool:
        if self.behaviors:
            # a misbehaving hub stonewalls cooperative closes
            return False
        channel_id = state.params.channel_id
        for ctx in self.routes.values():
            if (ctx.state not in TERMINAL_ROUTES
                    and channel_id in (ctx.in_channel, ctx.out_channel)):
                return False
        return balances == close_balances(state)

    def _on_close_request(self, src: str, body: dict, now: int) -> list[tuple[str, WireMessage]]:
        channel_id = body["channel_id"]
        state = self.channels.get(channel_id)
        reg = self.registry.get(src)
        if state is None or reg is None or reg.channel_id != channel_id:
            return [(src, error_message("NotFound", channel_id))]
        record = ClosingRecord.from_jsonable(body["record"])
        client_sig = crypto.Signature(state.params.scheme, bytes.fromhex(body["sig"]))
        if not crypto.verify(state.params.client_pk, record.signing_bytes, client_sig):
            return [(src, error_message("BadSignature", "closing record signature"))]
        if "STALE_RECEIPT_DISPUTE" in self.behaviors:
            # race the client to the contract with an understated receipt
            self.initiate_close(src, now)
            return [(src, error_message("ParamsMismatch", "balance disagreement"))]
        if not self._accept_close(state, record.balance_map):
            self._note("close_refused", channel=channel_id)
            return [(src, error_message("ParamsMismatch", "balance disagreement"))]
        ledger = self.ledgers[state.params.ledger_id]
        hub_sig = crypto.sign(self.sk_for(state.params.ledger_id), record.signing_bytes)
        try:
            settlement = self._ledger_call(
                ledger.cooperative_close, channel_id, record,
                {src: client_sig, self.config.hub_id: hub_sig})
        except HubpayError as exc:
            return [(src, error_message(exc.code, exc.detail))]
        self._note("cooperative_close", channel=channel_id)
        return [(src, WireMessage(K_CLOSE_OK, {
            "channel_id": channel_id,
            "settlement": settlement if settlement else record.balance_map,
        }))]

    # -- background event handler -----------------------------------------------------

    def hub_tick(self, now: int) -> list[tuple[str, WireMessage]]:
        self._journal({"t": "tick", "now": now})
        self._tick_outbox: list[tuple[str, WireMessage]] = []
        self._poll_ledgers(now)
        self._claim_endangered_routes(now)
        self._sweep_expired(now)
        self._progress_disputes(now)
        return self._tick_outbox

    def _poll_ledgers(self, now: int) -> None:
        for ledger_id in sorted(self.ledgers):
            ledger = self.ledgers[ledger_id]
            events = ledger.events_since(self.cursors[ledger_id])
            # consume only up to the current tick so that journal replay,
            # which runs against an already-written log, observes events at
            # the same point in time the live hub did
            take = 0
            for event in events:
                if event.at > now:
                    break
                take += 1
            events = events[:take]
            self.cursors[ledger_id] += take
            for event in events:
                self._react(ledger, event, now)

    def _react(self, ledger: Ledger, event, now: int) -> None:
        payload = event.payload
        channel_id = payload.get("channel_id")
        state = self.channels.get(channel_id)
        if state is None:
            return
        hub_id = self.config.hub_id
        if event.kind == EV_DEPOSITED:
            if payload["party"] == hub_id:
                state.my_deposit += payload["amount"]
            else:
                state.peer_deposit += payload["amount"]
        elif event.kind == EV_CLAIMED and not payload.get("refresh"):
            hashlock = bytes.fromhex(payload["hashlock"])
            if payload["claimant"] == hub_id:
                state.note_self_claimed(hashlock, payload["amount"])
                ctx = self.routes.get(hashlock)
                if ctx is not None and ctx.state == ROUTE_SECRET_HELD:
                    self._route_done(ctx, ROUTE_SETTLED_OUT)
                    self.fees_accrued += ctx.in_promise.amount - ctx.out_promise.amount
                    self._note("settled_onchain", payment=ctx.payment_id)
            else:
                state.note_peer_claimed(hashlock, payload["amount"])
                ctx = self.routes.get(hashlock)
                if (ctx is not None and ctx.out_channel == channel_id
                        and ctx.state == ROUTE_AWAIT_SECRET):
                    # the payee claimed our outgoing promise on-chain and
                    # published the preimage; collect the incoming leg
                    ctx.preimage = bytes.fromhex(payload["preimage"])
                    ctx.state = ROUTE_SECRET_HELD
                    self._note("preimage_harvested", payment=ctx.payment_id)
                    if self._should_forward_secret(ctx):
                        self._tick_outbox.append(self._forward_secret(ctx))
        elif event.kind == EV_DISPUTE_OPENED:
            self._respond_with_best_receipt(ledger, state)
        elif event.kind == EV_RECEIPT_SUBMITTED:
            if payload["party"] != hub_id:
                self._respond_with_best_receipt(ledger, state)
                self._refresh_claims(ledger, state)
        elif event.kind == EV_CLOSED:
            self.closed_channels[channel_id] = payload["settlement"]
            self._note("channel_closed", channel=channel_id,
                       settlement=payload["settlement"])
            for hashlock in sorted(self.active_routes):
                ctx = self.routes[hashlock]
                if channel_id in (ctx.in_channel, ctx.out_channel):
                    self._route_done(ctx, ROUTE_EXPIRED)

    def _route_done(self, ctx: RouteContext, state: str) -> None:
        ctx.state = state
        self.active_routes.discard(ctx.hashlock)

    def _dispute_receipt_choice(self, state: ChannelState) -> Receipt | None:
        return state.last_receipt_received

    def _respond_with_best_receipt(self, ledger: Ledger, state: ChannelState) -> None:
        contract = ledger.contracts.get(state.params.channel_id)
        if contract is None or contract.status != STATUS_CLOSING or contract.dispute is None:
            return
        mine = self._dispute_receipt_choice(state)
        if mine is None:
            return
        recorded = contract.dispute.receipts.get(mine.issuer)
        if recorded is not None and recorded[0].index >= mine.index:
            return
        try:
            self._ledger_call(ledger.respond_dispute, state.params.channel_id,
                              self.config.hub_id, mine)
            self._note("dispute_response", channel=state.params.channel_id,
                       index=mine.index)
        except HubpayError as exc:
            self._note("dispute_response_failed", channel=state.params.channel_id,
                       code=exc.code)

    def _refresh_claims(self, ledger: Ledger, state: ChannelState) -> None:
        if state.params.mode != MODE_CONCURRENT:
            return
        contract = ledger.contracts.get(state.params.channel_id)
        if contract is None or contract.dispute is None:
            return
        for hashlock, record in contract.claimed.items():
            if record.claimant != self.config.hub_id:
                continue
            recorded = contract.dispute.receipts.get(record.sender)
            if recorded is None or record.basis_index == recorded[0].index:
                continue
            held = state.last_receipt_received
            if held is None or held.signing_bytes != recorded[0].signing_bytes:
                continue
            promise = self.claims_made.get(hashlock)
            if promise is None:
                continue
            try:
                idx = state.last_receipt_leaves.index(promise.digest)
            except ValueError:
                continue
            proof = crypto.merkle_prove(state.last_receipt_leaves, idx)
            try:
                self._ledger_call(ledger.refresh_claim_proof, state.params.channel_id,
                                  self.config.hub_id, hashlock, (held, proof))
                self._note("claim_reproved", channel=state.params.channel_id)
            except HubpayError as exc:
                self._note("claim_reprove_failed", code=exc.code)

    def _claim_endangered_routes(self, now: int) -> None:
        delta = self.config.claim_margin_delta
        for hashlock in sorted(self.active_routes):
            ctx = self.routes[hashlock]
            if ctx.state != ROUTE_SECRET_HELD or ctx.claim_submitted:
                continue
            if now >= ctx.in_promise.expiry:
                continue
            if ctx.in_promise.expiry - now > delta:
                continue
            state = self.channels[ctx.in_channel]
            ledger = self.ledgers[state.params.ledger_id]
            proof = None
            contract = ledger.contracts.get(ctx.in_channel)
            if (contract is not None and contract.dispute is not None
                    and contract.dispute.receipts.get(ctx.in_promise.sender)):
                proof = state.inclusion_proof(hashlock)
            ctx.claim_submitted = True
            self.claims_made[hashlock] = ctx.in_promise
            try:
                self._ledger_call(ledger.claim_promise, ctx.in_channel,
                                  self.config.hub_id, ctx.in_promise,
                                  ctx.preimage, proof)
                self._note("claimed_incoming", payment=ctx.payment_id,
                           channel=ctx.in_channel)
            except HubpayError as exc:
                self._note("claim_failed", payment=ctx.payment_id, code=exc.code)

    def _sweep_expired(self, now: int) -> None:
        for channel_id in sorted(self.channels):
            self.channels[channel_id].expire_pending(now)
        for hashlock in sorted(self.active_routes):
            ctx = self.routes[hashlock]
            if ctx.state == ROUTE_AWAIT_SECRET and now >= ctx.out_promise.expiry:
                self._route_done(ctx, ROUTE_EXPIRED)
                self._note("route_expired", payment=ctx.payment_id)
            elif ctx.state == ROUTE_SECRET_HELD and now >= ctx.in_promise.expiry:
                self._route_done(ctx, ROUTE_EXPIRED)
                self._note("route_lost", payment=ctx.payment_id)

    def _progress_disputes(self, now: int) -> None:
        for channel_id in sorted(self.channels):
            state = self.channels[channel_id]
            ledger = self.ledgers[state.params.ledger_id]
            contract = ledger.contracts.get(channel_id)
            if contract is None or contract.status != STATUS_CLOSING:
                continue
            if contract.dispute is None or channel_id in self.finalize_submitted:
                continue
            if now >= contract.dispute.opened_at + state.params.dispute_window:
                self.finalize_submitted.add(channel_id)
                try:
                    self._ledger_call(ledger.finalize_settlement, channel_id)
                    self._note("finalized", channel=channel_id)
                except HubpayError as exc:
                    self._note("finalize_failed", channel=channel_id, code=exc.code)

    def _initiate_receipt_choice(self, state: ChannelState) -> Receipt | None:
        if "STALE_RECEIPT_DISPUTE" in self.behaviors and state.first_receipt_sent:
            # understate the counterparty's credit with an old self-issued receipt
            return state.first_receipt_sent
        return state.last_receipt_received

    def initiate_close(self, client_id: str, now: int) -> None:
        """Hub-initiated unilateral close of a client channel."""
        reg = self.registry.get(client_id)
        if reg is None:
            return
        state = self.channels[reg.channel_id]
        ledger = self.ledgers[state.params.ledger_id]
        contract = ledger.contracts.get(reg.channel_id)
        if contract is None or contract.status != STATUS_OPEN:
            return
        try:
            self._ledger_call(ledger.initiate_dispute, reg.channel_id,
                              self.config.hub_id, self._initiate_receipt_choice(state))
            self._note("dispute_opened", channel=reg.channel_id)
        except HubpayError as exc:
            self._note("dispute_open_failed", channel=reg.channel_id, code=exc.code)

    # -- persistence ---------------------------------------------------------------

    def persist_state(self) -> dict:
        return {
            "config": self.config.to_jsonable(),
            "registry": {cid: r.to_jsonable() for cid, r in sorted(self.registry.items())},
            "channels": {cid: s.to_jsonable() for cid, s in sorted(self.channels.items())},
            "routes": {h.hex(): c.to_jsonable() for h, c in sorted(self.routes.items())},
            "cursors": dict(sorted(self.cursors.items())),
            "channel_counter": self.channel_counter,
            "fees_accrued": self.fees_accrued,
            "closed_channels": dict(sorted(self.closed_channels.items())),
            "claims_made": {h.hex(): p.to_jsonable()
                            for h, p in sorted(self.claims_made.items())},
            "finalize_submitted": sorted(self.finalize_submitted),
        }

    def persist_json(self) -> str:
        return json.dumps(self.persist_state(), sort_keys=True, separators=(",", ":"))

    def snapshot_now(self) -> dict:
        snap = self.persist_state()
        self.store.set_snapshot(snap)
        return snap

    def _load_state(self, snap: dict) -> None:
        try:
            self.registry = {cid: Registration(**r) for cid, r in snap["registry"].items()}
            self.channels = {cid: ChannelState.from_jsonable(s)
                             for cid, s in snap["channels"].items()}
            self.routes = {bytes.fromhex(h): RouteContext.from_jsonable(c)
                           for h, c in snap["routes"].items()}
            self.active_routes = {h for h, c in self.routes.items()
                                  if c.state not in TERMINAL_ROUTES}
            self.cursors = {lid: int(v) for lid, v in snap["cursors"].items()}
            self.channel_counter = int(snap["channel_counter"])
            self.fees_accrued = int(snap["fees_accrued"])
            self.closed_channels = dict(snap["closed_channels"])
            self.claims_made = {bytes.fromhex(h): Promise.from_jsonable(p)
                                for h, p in snap["claims_made"].items()}
            self.finalize_submitted = set(snap["finalize_submitted"])
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise RecoveryError(f"corrupt snapshot: {exc}") from exc

    @classmethod
    def recover(cls, config: HubConfig, ledgers: dict[str, Ledger],
                store: HubStore) -> "HubCore":
        """Rebuild a hub from its snapshot plus the journal written since.

        Journal replay re-runs the original handlers with ledger submissions
        and outbox delivery suppressed; ledger-derived state is re-learned by
        polling the (already written) event log.
        """
        hub = cls(config, ledgers, store=store)
        if store.snapshot is not None:
            hub._load_state(store.snapshot)
        hub.replaying = True
        try:
            for entry in store.journal:
                if entry["t"] == "msg":
                    hub.handle_message(entry["src"],
                                       WireMessage(entry["kind"], entry["body"]),
                                       entry["now"])
                elif entry["t"] == "tick":
                    hub.hub_tick(entry["now"])
                else:
                    raise RecoveryError(f"unknown journal entry {entry!r}")
        except HubpayError:
            raise
        except Exception as exc:
            raise RecoveryError(f"journal replay failed: {exc}") from exc
        finally:
            hub.replaying = False
        hub.trace.clear()
        return hub
