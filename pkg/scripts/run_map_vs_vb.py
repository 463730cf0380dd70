#!/usr/bin/env python3
"""One VB fit against MAP with cross-validated priors on Gaussian circular data.

Example: python3 scripts/run_map_vs_vb.py --seeds 0 1 2 --out results/map_vs_vb
"""

import argparse
import logging

from gcmf.experiments.protocols import circular_map_vs_vb, merge_reports, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--ms", type=int, nargs="+", default=[1, 3])
    ap.add_argument("--small", action="store_true")
    ap.add_argument("--out", default="results/map_vs_vb")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    reports = []
    for seed in args.seeds:
        rep = circular_map_vs_vb(seed, small=args.small, Ms=tuple(args.ms))
        logging.info(rep.summary())
        reports.append(rep)
    merged = merge_reports(reports)
    write_report(merged, args.out)
    for M in args.ms:
        key = f"M={M}"
        rows = {(r.method, r.seed): r.rmse for r in merged.rows if r.setting == key}
        wins = sum(rows[("VB", s)] <= rows[("MAP", s)] for s in args.seeds)
        print(f"{key}: VB at least as good as MAP in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
