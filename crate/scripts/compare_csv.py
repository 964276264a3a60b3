#!/usr/bin/env python3
"""Join solver flows.csv with simulator sim_flows.csv on flow_id.

usage: compare_csv.py FLOWS_CSV SIM_FLOWS_CSV [--column throughput_pkts_s] [-o OUT]

Writes flow_id, variant, model, sim and rel_diff = (model - sim) / sim for the
chosen column. Flows present in only one file are reported on stderr.
"""

import argparse
import csv
import sys


def read(path):
    with open(path, newline="") as f:
        return {row["flow_id"]: row for row in csv.DictReader(f)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("flows")
    ap.add_argument("sim_flows")
    ap.add_argument("--column", default="throughput_pkts_s")
    ap.add_argument("-o", "--output", help="output file (default stdout)")
    args = ap.parse_args()

    model = read(args.flows)
    sim = read(args.sim_flows)
    for only, name in ((model.keys() - sim.keys(), args.flows), (sim.keys() - model.keys(), args.sim_flows)):
        for fid in sorted(only):
            print(f"flow {fid} only in {name}", file=sys.stderr)

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out)
    w.writerow(["flow_id", "variant", f"model_{args.column}", f"sim_{args.column}", "rel_diff"])
    for fid, row in model.items():
        if fid not in sim:
            continue
        try:
            a = float(row[args.column])
            b = float(sim[fid][args.column])
        except KeyError:
            sys.exit(f"column {args.column} missing")
        rel = (a - b) / b if b != 0 else float("nan")
        w.writerow([fid, row["variant"], f"{a:.6f}", f"{b:.6f}", f"{rel:.6f}"])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
