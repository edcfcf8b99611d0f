#!/usr/bin/env python3
"""Print the modelled throughput/power tables next to the published measurements."""

from __future__ import annotations

import argparse

from ternsim import perf
from ternsim.errors import CapacityError
from ternsim.hardware import capacity_lower_bound, min_cards, plan_placement
from ternsim.perf import HBM, NODE_SCALING, ON_CHIP, PerfQuery, RooflineParams
from ternsim.specs import MB, MODEL_PRESETS, resolve_board


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--board", default="u280")
    ap.add_argument("--eta", type=float, default=RooflineParams().hbm_efficiency)
    ap.add_argument("--node", choices=sorted(NODE_SCALING), default="16nm->8nm")
    args = ap.parse_args()
    board = resolve_board(args.board)
    roof = RooflineParams(args.eta)

    print("== model presets and placement ==")
    for m in MODEL_PRESETS.values():
        line = f"{m.name:>5}: d={m.dim:<5} L={m.layers:<3} {m.storage_bytes / MB:7.0f} MB"
        try:
            n = min_cards(m, board)
            line += f"  capacity bound {capacity_lower_bound(m, board)}, placement {plan_placement(m, board, n).describe()}"
        except CapacityError as e:
            line += f"  on-chip: {e}"
        print(line)

    print("\n== calibration ==")
    fixed, per_elem = perf.fit_overhead()
    print(f"least-squares overhead: {fixed:.2f} + {per_elem:.4f} * d cycles/layer")
    print(f"frozen: {perf.CalibrationConstants()}")

    print("\n== fully on-chip ==")
    rows = [perf.onchip_throughput(PerfQuery(MODEL_PRESETS["370m"], ON_CHIP, b), board) for b in (1, 16)]
    print(perf.format_table(rows))

    print("\n== HBM-assisted ==")
    rows = [
        perf.hbm_throughput(PerfQuery(MODEL_PRESETS[n], HBM, b), board, roof)
        for n in ("1.3b", "2.7b")
        for b in (1, 16)
    ]
    print(perf.format_table(rows))
    for n in ("1.3b", "2.7b"):
        print(f"{n} batch threshold {perf.batch_threshold(MODEL_PRESETS[n], board, roof):.2f}")
    r7 = perf.project_7b(board, roof)
    print(f"7b projection: {r7.tokens_per_s:,.0f} tk/s at {r7.power_w} W")

    print(f"\n== same-node projection ({args.node}, power x{NODE_SCALING[args.node]}) ==")
    f = NODE_SCALING[args.node]
    for r in [
        perf.onchip_throughput(PerfQuery(MODEL_PRESETS["370m"], ON_CHIP, b), board) for b in (1, 16)
    ] + [perf.hbm_throughput(PerfQuery(MODEL_PRESETS["1.3b"], HBM, b), board, roof) for b in (1, 16)]:
        base = perf.reference_baseline(r)
        eff = perf.scaled_efficiency(r.efficiency, f)
        print(f"{r.model:>5} B={r.batch:<3} {eff:8.1f} tk/s/W  {eff / base.efficiency:5.1f}x {base.hardware}")

    print("\n== published comparison rows ==")
    for b in perf.BASELINES:
        eff = "-" if b.efficiency is None else f"{b.efficiency:.1f}"
        print(f"{b.hardware:<24} {b.model:>5} B={b.batch:<3} {b.tokens_per_s:>7,.0f} tk/s  {b.power_w} W  {eff} tk/s/W")


if __name__ == "__main__":
    main()
