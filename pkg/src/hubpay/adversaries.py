"""Active adversarial moves driven by scripted behavior directives.

Passive deviations (withhold a secret, withhold a receipt, submit a stale
receipt) live as hooks inside the hub and wallet cores. The attacks here
need to forge or replay whole messages and on-chain claims, so they run as
an extra per-tick pass over any actor whose behavior set demands them.
Every attack is one-shot and records its outcome in the actor's trace.
"""

from __future__ import annotations

from .crypto import hash_commit, new_preimage, sign
from .errors import HubpayError
from .hub import ROUTE_SETTLED_IN, HubCore
from .messages import Promise
from .wallet import OUT_PAID, OUT_RECEIVED, WalletCore
from .wire import K_PROMISE, WireMessage


def run_active_attacks(world, actor_id: str, core) -> None:
    flags = world.adversary_state.setdefault(actor_id, {})
    if isinstance(core, WalletCore):
        if "OVERSPEND_PROMISE" in core.behaviors:
            _wallet_overspend(world, core, flags)
        if "REPLAY_PROMISE" in core.behaviors:
            _wallet_replay(world, core, flags)
        if "DOUBLE_CLAIM" in core.behaviors:
            _wallet_double_claim(world, core, flags)
    elif isinstance(core, HubCore):
        if "REPLAY_PROMISE" in core.behaviors:
            _hub_replay(world, core, flags)
        if "DOUBLE_CLAIM" in core.behaviors:
            _hub_double_claim(world, core, flags)


def _other_client(world, me: str) -> str | None:
    others = sorted(c for c in world.wallets if c != me)
    return others[0] if others else None


def _wallet_overspend(world, wallet: WalletCore, flags: dict) -> None:
    if flags.get("overspend_done") or wallet.state is None:
        return
    target = _other_client(world, wallet.client_id)
    if target is None or wallet.state.my_deposit == 0:
        return
    flags["overspend_done"] = True
    state = wallet.state
    amount = state.available_balance() + 10_000
    hashlock = hash_commit(new_preimage(wallet.rng))
    promise = Promise(state.params.channel_id, wallet.client_id,
                      state.next_out_index, amount, hashlock, world.tick + 40)
    promise = promise.with_sig(sign(wallet.sk, promise.signing_bytes))
    wallet._note("attack_overspend", amount=amount)
    world.send(wallet.client_id, "hub", WireMessage(K_PROMISE, {
        "payment_id": f"atk-over-{wallet.client_id}",
        "payee": target,
        "promise": promise.to_jsonable(),
    }))


def _wallet_replay(world, wallet: WalletCore, flags: dict) -> None:
    if flags.get("replay_done"):
        return
    for flow in wallet.flows.values():
        if flow.role == "sender" and flow.outcome == OUT_PAID and flow.promise is not None:
            flags["replay_done"] = True
            wallet._note("attack_replay", payment=flow.payment_id)
            world.send(wallet.client_id, "hub", WireMessage(K_PROMISE, {
                "payment_id": flow.payment_id,
                "payee": flow.counterparty,
                "promise": flow.promise.to_jsonable(),
            }))
            return


def _wallet_double_claim(world, wallet: WalletCore, flags: dict) -> None:
    """The covered-claim attack: submit the newest receipt (whose cumulative
    credit already includes a resolved promise), then claim that promise."""
    if flags.get("double_claim_done") or wallet.state is None:
        return
    target = None
    for flow in wallet.flows.values():
        if flow.role == "payee" and flow.outcome == OUT_RECEIVED and flow.promise is not None:
            target = flow
            break
    if target is None:
        return
    contract = wallet.ledger.contracts.get(wallet.channel_id)
    if contract is None:
        return
    if contract.status == "OPEN":
        if not flags.get("double_claim_dispute"):
            flags["double_claim_dispute"] = True
            try:
                wallet.ledger.initiate_dispute(wallet.channel_id, wallet.client_id,
                                               wallet.state.last_receipt_received)
                wallet._note("attack_double_claim_dispute")
            except HubpayError as exc:
                wallet._note("attack_dispute_failed", code=exc.code)
        return
    if contract.status != "CLOSING":
        return
    flags["double_claim_done"] = True
    promise = target.promise
    preimage = wallet.state.secrets.get(promise.hashlock)
    if preimage is None:
        return
    try:
        wallet.ledger.claim_promise(wallet.channel_id, wallet.client_id,
                                    promise, preimage,
                                    wallet.state.inclusion_proof(promise.hashlock))
        wallet._note("attack_double_claim_succeeded", payment=target.payment_id)
    except HubpayError as exc:
        wallet._note("attack_double_claim_rejected", code=exc.code,
                     payment=target.payment_id)


def _hub_replay(world, hub: HubCore, flags: dict) -> None:
    if flags.get("replay_done"):
        return
    for hashlock in sorted(hub.routes):
        ctx = hub.routes[hashlock]
        if ctx.state == ROUTE_SETTLED_IN:
            flags["replay_done"] = True
            payee = hub.channels[ctx.out_channel].params.client_id
            hub._note("attack_replay", payment=ctx.payment_id)
            world.send("hub", payee, WireMessage(K_PROMISE, {
                "payment_id": ctx.payment_id,
                "promise": ctx.out_promise.to_jsonable(),
            }))
            return


def _hub_double_claim(world, hub: HubCore, flags: dict) -> None:
    """Hub variant: its incoming credit is already receipted; submit that
    receipt in a dispute and then claim the covered incoming promise."""
    if flags.get("double_claim_done"):
        return
    target = None
    for hashlock in sorted(hub.routes):
        ctx = hub.routes[hashlock]
        if ctx.state == ROUTE_SETTLED_IN and ctx.preimage is not None:
            target = ctx
            break
    if target is None:
        return
    state = hub.channels[target.in_channel]
    ledger = hub.ledgers[state.params.ledger_id]
    contract = ledger.contracts.get(target.in_channel)
    if contract is None:
        return
    if contract.status == "OPEN":
        if not flags.get("double_claim_dispute"):
            flags["double_claim_dispute"] = True
            try:
                ledger.initiate_dispute(target.in_channel, hub.config.hub_id,
                                        state.last_receipt_received)
                hub._note("attack_double_claim_dispute")
            except HubpayError as exc:
                hub._note("attack_dispute_failed", code=exc.code)
        return
    if contract.status != "CLOSING":
        return
    flags["double_claim_done"] = True
    try:
        ledger.claim_promise(target.in_channel, hub.config.hub_id,
                             target.in_promise, target.preimage,
                             state.inclusion_proof(target.hashlock))
        hub._note("attack_double_claim_succeeded", payment=target.payment_id)
    except HubpayError as exc:
        hub._note("attack_double_claim_rejected", code=exc.code,
                  payment=target.payment_id)
