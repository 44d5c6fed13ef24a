#!/usr/bin/env python3
"""Amortization in one picture: thousands of payments, a handful of on-chain
transactions, in both channel modes.

    python demos/throughput_demo.py [n]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hubpay.simnet import throughput_bench


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    for mode, window in (("SERIALIZED", 1), ("CONCURRENT", 16)):
        report = throughput_bench(n, mode, window=window)
        m = report.metrics
        print(f"{mode:>10}: {m['payments_paid']} payments settled off-chain in "
              f"{m['ticks']} ticks, {m['onchain_tx_count']} on-chain txs, "
              f"{report.payments_per_second:,.0f} payments/s")
    print("\nledger footprint stays constant no matter how many payments flow:")
    print("two deploys, four deposits, two cooperative closes.")


if __name__ == "__main__":
    main()
