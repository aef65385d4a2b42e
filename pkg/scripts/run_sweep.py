#!/usr/bin/env python3
"""Run the scaling-comparison sweep and print trend ratios.

Reproduces the headline separation between the tree protocol and the
baselines: root traffic stays flat for cosi while the naive scheme grows
linearly and threshold-VSS quadratically.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cosikit import simnet


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sweep", default=str(Path(__file__).resolve().parent.parent
                                               / "sweeps" / "paper_scaling.json"))
    parser.add_argument("--out", default="scaling.csv")
    parser.add_argument("--summary", action="store_true",
                        help="print trend ratios after the run")
    args = parser.parse_args()

    configs = simnet.load_sweep(args.sweep)
    metrics = []
    for cfg in configs:
        rows = simnet.run_sim(cfg)
        metrics.extend(rows)
        for m in rows:
            print(f"{m.scheme:6s} N={m.n:<5d} B={m.branching:<3d} "
                  f"latency={m.latency * 1000:9.1f} ms  root_bytes={m.root_bytes:<8d} "
                  f"msgs={m.total_msgs:<7d} {m.outcome}")

    Path(args.out).write_text(simnet.emit_report(metrics))
    print(f"\nwrote {args.out} ({len(metrics)} rows)")

    if args.summary:
        by_key = {(m.scheme, m.n): m for m in metrics}

        def ratio(scheme, hi, lo, attr):
            a, b = by_key.get((scheme, hi)), by_key.get((scheme, lo))
            if not a or not b:
                return None
            return getattr(a, attr) / getattr(b, attr)

        print("\ntrends:")
        r = ratio("cosi", 1024, 64, "root_bytes")
        if r:
            print(f"  cosi  root bytes 64 -> 1024:  x{r:.2f}  (flat)")
        r = ratio("naive", 1024, 64, "root_bytes")
        if r:
            print(f"  naive root bytes 64 -> 1024:  x{r:.2f}  (linear)")
        r = ratio("jvss", 64, 16, "total_msgs")
        if r:
            print(f"  jvss  messages   16 -> 64:    x{r:.2f}  (quadratic)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
