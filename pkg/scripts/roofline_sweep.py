#!/usr/bin/env python3
"""Plot-ready CSV of the HBM roofline for several models and HBM efficiencies."""

from __future__ import annotations

import argparse
import csv
import sys

from ternsim import perf
from ternsim.perf import RooflineParams
from ternsim.specs import MODEL_PRESETS, resolve_board


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", default="1.3b,2.7b,7b")
    ap.add_argument("--etas", default="0.6,0.75,0.9")
    ap.add_argument("--max-batch", type=int, default=32)
    ap.add_argument("--board", default="u280")
    args = ap.parse_args()
    board = resolve_board(args.board)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["model", "eta", "batch", "intensity", "tokens_per_s", "regime", "threshold"])
    for name in args.models.split(","):
        m = MODEL_PRESETS[name.strip()]
        for eta in map(float, args.etas.split(",")):
            roof = RooflineParams(eta)
            t = perf.batch_threshold(m, board, roof)
            for r in perf.roofline_sweep(m, board, range(1, args.max_batch + 1), roof):
                w.writerow([m.name, eta, r.batch, r.intensity, f"{r.tokens_per_s:.2f}", r.regime, f"{t:.3f}"])


if __name__ == "__main__":
    main()
