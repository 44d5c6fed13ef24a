#!/usr/bin/env python3
"""Walk one payment from a sender on ledger A to a payee on ledger B.

The two ledgers use different signature schemes; the only thing they share
is the hash function, which is what lets a single secret unlock both legs.
Run from the repo root:

    python demos/cross_ledger_payment.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hubpay.scenarios import cross_ledger
from hubpay.simnet import World


def main():
    scenario = cross_ledger(seed=42)
    world = World(scenario)
    report = world.run()

    print(f"scenario: {report.name} (seed {report.seed})")
    print(f"ledger LA scheme: {world.ledgers['LA'].scheme}")
    print(f"ledger LB scheme: {world.ledgers['LB'].scheme}")
    print()

    print("promise legs per payment (note the shared hashlock):")
    for entry in report.trace:
        if entry["ev"] == "msg" and entry["kind"] == "PROMISE":
            print(f"  t={entry['t']:>3} {entry['src']:>5} -> {entry['dst']:<5}"
                  f" channel={entry['channel']:<13} amount={entry['amount']:>3}"
                  f" hashlock={entry['hashlock']}")
    print()

    print("what each ledger recorded (no per-payment data, only lifecycle):")
    for ledger_id, ledger in sorted(world.ledgers.items()):
        kinds = [e.kind for e in ledger.events]
        print(f"  {ledger_id}: {kinds}")
    print()

    print(f"final balances: {report.final_balances}")
    print(f"metrics: {report.metrics}")
    for result in report.assertion_results:
        print(f"  [{'ok' if result['ok'] else 'FAIL'}] {result['name']}: {result['detail']}")


if __name__ == "__main__":
    main()
