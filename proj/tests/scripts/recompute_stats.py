#!/usr/bin/env python3
"""Recompute bench statistics from a CSV and compare with the JSON report.

usage: recompute_stats.py RUN.csv RUN.json [--rtol 1e-9]
Exit 0 on agreement, 1 on mismatch, 77 when numpy is unavailable.
"""
import argparse
import csv
import json
import sys

try:
    import numpy as np
except ImportError:
    print("numpy not available", file=sys.stderr)
    sys.exit(77)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv_path")
    ap.add_argument("json_path")
    ap.add_argument("--rtol", type=float, default=1e-9)
    args = ap.parse_args()

    with open(args.csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    with open(args.json_path) as f:
        report = json.load(f)

    lat = np.array([float(r["latency_ms"]) for r in rows], dtype=np.float64)
    got = report["latency_ms"]
    want = {
        "mean": float(np.mean(lat)),
        "median": float(np.percentile(lat, 50, method="linear")),
        "p90": float(np.percentile(lat, 90, method="linear")),
        "p99": float(np.percentile(lat, 99, method="linear")),
        "min": float(np.min(lat)),
        "max": float(np.max(lat)),
    }
    bad = []
    if len(rows) != report["samples"]:
        bad.append(f"samples: csv {len(rows)} report {report['samples']}")
    for key, value in want.items():
        if abs(got[key] - value) > args.rtol * max(abs(value), 1e-300):
            bad.append(f"{key}: report {got[key]!r} recomputed {value!r}")
    order = [got[k] for k in ("min", "median", "p90", "p99", "max")]
    if any(a > b for a, b in zip(order, order[1:])):
        bad.append(f"percentiles not monotone: {order}")

    for line in bad:
        print(line, file=sys.stderr)
    print(f"{len(rows)} rows, mean {want['mean']:.6f} ms, p99 {want['p99']:.6f} ms: "
          + ("match" if not bad else "MISMATCH"))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
