#!/usr/bin/env python3
"""Show the dispute path beating a cheater, step by step at the ledger level.

A hub tries to settle a channel with an old receipt that understates what it
owes. The client answers with the newer receipt it kept; the contract takes
the higher index, and the cheater forfeits a slice of its payout.

    python demos/dispute_walkthrough.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hubpay.crypto import SCHEME_A, generate_keypair, sign
from hubpay.ledger import Ledger
from hubpay.messages import ChannelParams, Receipt
from hubpay.crypto import ZERO_DIGEST


def main():
    client_sk, client_pk = generate_keypair(SCHEME_A, b"demo-client")
    hub_sk, hub_pk = generate_keypair(SCHEME_A, b"demo-hub")
    params = ChannelParams(
        channel_id="ch-demo", ledger_id="L1", client_id="client", hub_id="hub",
        client_pk=client_pk, hub_pk=hub_pk, scheme=SCHEME_A, mode="SERIALIZED",
        claim_margin_delta=4, dispute_window=10, penalty_bps=1000)
    ledger = Ledger("L1", SCHEME_A, {"client": 200, "hub": 200})
    ledger.deploy_contract(params, "hub")
    ledger.deposit("ch-demo", "client", 100)
    ledger.deposit("ch-demo", "hub", 100)
    print("channel funded: deposits (100, 100)")

    def hub_receipt(index, cumulative):
        receipt = Receipt("ch-demo", "hub", index, cumulative, ZERO_DIGEST)
        return receipt.with_sig(sign(hub_sk, receipt.signing_bytes))

    # off-chain history: the hub signed receipts crediting the client 10,
    # then 30; the client keeps both, the hub would prefer the old one
    stale, fresh = hub_receipt(1, 10), hub_receipt(3, 30)

    print("hub opens the dispute with its stale self-issued receipt (credit 10)")
    ledger.initiate_dispute("ch-demo", "hub", stale)

    print("client responds with the newer hub-signed receipt (credit 30)")
    ledger.respond_dispute("ch-demo", "client", fresh)

    ledger.advance_time(params.dispute_window)
    settlement = ledger.finalize_settlement("ch-demo")
    view = ledger.read_state("ch-demo")
    print(f"proven misbehaving: {view['dispute']['misbehaving']}")
    print(f"settlement: {settlement}")
    print("(raw split was 130/70; the hub forfeited 10% of its 70)")


if __name__ == "__main__":
    main()
