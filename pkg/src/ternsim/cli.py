"""``ternsim`` command line.

Exit codes: 0 ok, 1 verification failed, 2 bad data or format, 3 capacity,
64 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import codec
from .errors import CapacityError, FormatError, TernsimError, UsageError
from .hardware import capacity_lower_bound, min_cards, plan_placement
from .model import DecodeSession, Engine, generate, iter_random_layers, random_inputs
from .perf import (
    HBM,
    NODE_SCALING,
    ON_CHIP,
    UNCALIBRATED,
    CalibrationConstants,
    PerfQuery,
    RooflineParams,
    batch_threshold,
    compute_bound_tps,
    evaluate,
    format_table,
    memory_bound_tps,
    project_node_scaling,
    reference_baseline,
    roofline_sweep,
    scaled_efficiency,
)
from .reference import float_reference_forward, relative_l2
from .specs import MB, MODEL_PRESETS, ModelSpec, resolve_board, resolve_model, structural_storage_bytes
from .storage import MANIFEST, read_manifest, read_model_dir, write_activations, write_model_dir
from .tmat import BatchGroupPlan, EngineCounters

EXIT_OK, EXIT_VERIFY, EXIT_FORMAT, EXIT_CAPACITY, EXIT_USAGE = 0, 1, 2, 3, 64
VERIFY_THRESHOLD = 0.05
VARIANT_ALIASES = {"onchip": ON_CHIP, "on-chip": ON_CHIP, ON_CHIP: ON_CHIP, "hbm": HBM, HBM: HBM}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(fmt: str, data: dict, text: Callable[[dict], str], out) -> None:
    if fmt == "json":
        json.dump(data, out, indent=2, sort_keys=True)
        out.write("\n")
    elif fmt == "csv":
        w = csv.writer(out, lineterminator="\n")
        flat = {k: v for k, v in data.items() if not isinstance(v, (dict, list))}
        w.writerow(flat.keys())
        w.writerow(flat.values())
    else:
        out.write(text(data).rstrip("\n") + "\n")


def _ratio_line(n: int, nbytes: int) -> str:
    if n == 0:
        return "0 trits"
    return f"{n:,} trits -> {nbytes:,} bytes ({nbytes * 8 / n:.3f} bits/trit, {codec.storage_ratio_vs_2bit(n):.3f}x of 2-bit)"


# -- pack / unpack --------------------------------------------------------------


def _load_trit_arrays(path: Path) -> list[tuple[str, np.ndarray]]:
    if path.suffix == ".npz":
        with np.load(path) as z:
            return [(k, z[k]) for k in sorted(z.files)]
    if path.suffix == ".npy":
        return [(path.stem, np.load(path))]
    raise UsageError(f"{path}: expected .npy/.npz trits or a model manifest")


def cmd_pack(args, out) -> int:
    src = Path(args.input)
    if src.is_dir() or src.name == MANIFEST or src.suffix == ".txt":
        # complete a manifest-only model directory from its recorded seed
        manifest = src / MANIFEST if src.is_dir() else src
        spec, extras = read_manifest(manifest)
        seed = int(extras.get("seed", args.seed))
        p0 = float(extras.get("zero_prob", 1 / 3))
        dest = Path(args.out) if args.out else manifest.parent
        summary = write_model_dir(dest, spec, iter_random_layers(spec, seed, p0), extras | {"seed": seed, "zero_prob": p0})
        n, nbytes = int(summary["params"]), int(summary["weight_bytes"])
        what = str(dest)
    else:
        if not args.out:
            raise UsageError("pack needs --out")
        tensors = [(name, codec.pack_tensor(np.asarray(a))) for name, a in _load_trit_arrays(src)]
        codec.write_weight_file(args.out, tensors)
        n = sum(p.numel for _, p in tensors)
        nbytes = sum(p.nbytes for _, p in tensors)
        what = args.out
    data = {"output": what, "trits": n, "packed_bytes": nbytes, "ratio_vs_2bit": codec.storage_ratio_vs_2bit(n) if n else 0.0}
    _emit(args.format, data, lambda d: f"packed {_ratio_line(n, nbytes)} into {what}", out)
    return EXIT_OK


def cmd_unpack(args, out) -> int:
    if not args.out:
        raise UsageError("unpack needs --out")
    tensors = codec.read_weight_file(args.input)
    arrays = {name: codec.unpack_tensor(p) for name, p in tensors}
    with open(args.out, "wb") as f:
        np.savez(f, **arrays)
    n = sum(a.size for a in arrays.values())
    nbytes = sum(p.nbytes for _, p in tensors)
    data = {"output": args.out, "tensors": len(arrays), "trits": n, "packed_bytes": nbytes}
    _emit(args.format, data, lambda d: f"unpacked {len(arrays)} tensors, {_ratio_line(n, nbytes)}, to {args.out}", out)
    return EXIT_OK


# -- gen-model / run ---------------------------------------------------------------


def _gen_spec(args) -> ModelSpec:
    if args.model:
        base = resolve_model(args.model)
    elif args.dim and args.layers:
        base = None
    else:
        raise UsageError("gen-model needs --model or both --dim and --layers")
    if base is not None and args.dim is None and args.layers is None:
        return base
    dim = args.dim or base.dim
    layers = args.layers or base.layers
    name = f"{base.name}-d{dim}-l{layers}" if base else f"d{dim}-l{layers}"
    return ModelSpec(name, dim, layers, structural_storage_bytes(dim, layers))


def cmd_gen_model(args, out) -> int:
    if not args.out:
        raise UsageError("gen-model needs --out")
    spec = _gen_spec(args)
    if not 0 <= args.zero_prob <= 1:
        raise UsageError("--zero-prob must be in [0, 1]")
    extras = {"seed": args.seed, "zero_prob": repr(args.zero_prob)}
    layers = None if args.manifest_only else iter_random_layers(spec, args.seed, args.zero_prob)
    summary = write_model_dir(args.out, spec, layers, extras)
    data = {
        "output": args.out,
        "name": spec.name,
        "dim": spec.dim,
        "layers": spec.layers,
        "logical_params": spec.logical_params,
        "allocated_params": spec.allocated_params,
        "storage_bytes": spec.storage_bytes,
        "written_weight_bytes": summary["weight_bytes"],
        "manifest_only": bool(args.manifest_only),
    }

    def text(d):
        lines = [
            f"model {spec.name}: dim={spec.dim} layers={spec.layers} glu_dim={spec.glu_dim}",
            f"ternary params {spec.logical_params / 1e6:,.1f}M logical, {spec.allocated_params / 1e6:,.1f}M tile-padded",
            f"declared storage {spec.storage_bytes / MB:,.1f} MB ({spec.weight_trits / 1e6:,.1f}M trits at 1.6 bits)",
        ]
        if args.manifest_only:
            lines.append(f"wrote manifest only to {args.out}")
        else:
            lines.append(f"wrote {summary['weight_bytes'] / MB:,.2f} MB packed weights to {args.out}")
        return "\n".join(lines)

    _emit(args.format, data, text, out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    if not args.model:
        raise UsageError("run needs --model (a model directory)")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    BatchGroupPlan(args.batch)  # batch groups must tile the core lanes
    spec, layers, _ = read_model_dir(args.model)
    counter = EngineCounters()
    engine = Engine(threads=args.threads, counter=counter)
    inputs = random_inputs(spec, args.seed, args.steps, args.batch)
    outputs = [generate(DecodeSession(spec, layers, engine=engine), inputs[b]) for b in range(args.batch)]
    if args.out:
        write_activations(args.out, outputs)

    data = {
        "model": spec.name,
        "batch": args.batch,
        "steps": args.steps,
        "seed": args.seed,
        "output": args.out,
        "matvecs": counter.calls,
        "core_cycles": counter.cycles,
        "checksum": int(sum(int(np.abs(q.values.astype(np.int64)).sum()) for row in outputs for q in row)),
    }
    code = EXIT_OK
    if args.verify:
        errs = np.array(
            [
                [relative_l2(q.dequantize(), r) for q, r in zip(row, float_reference_forward(layers, inputs[b]))]
                for b, row in enumerate(outputs)
            ]
        )
        data |= {"max_rel_error": float(errs.max()), "mean_rel_error": float(errs.mean()), "threshold": args.threshold}
        data["verified"] = bool(errs.max() <= args.threshold)
        if not data["verified"]:
            code = EXIT_VERIFY

    def text(d):
        lines = [
            f"ran {spec.name} (d={spec.dim}, L={spec.layers}) batch={d['batch']} steps={d['steps']} seed={d['seed']}",
            f"{d['matvecs']} mat-vecs, {d['core_cycles']:,} modelled core cycles",
        ]
        if args.out:
            lines.append(f"activations written to {args.out}")
        if args.verify:
            status = "PASS" if d["verified"] else "FAIL"
            lines.append(
                f"verify {status}: max rel L2 {d['max_rel_error']:.4%}, mean {d['mean_rel_error']:.4%} "
                f"(threshold {args.threshold:.2%})"
            )
        return "\n".join(lines)

    _emit(args.format, data, text, out)
    return code


# -- plan / perf / roofline ---------------------------------------------------------


def cmd_plan(args, out) -> int:
    spec = resolve_model(args.model or "370m")
    board = resolve_board(args.board)
    lower = capacity_lower_bound(spec, board)
    cards = args.cards if args.cards is not None else min_cards(spec, board)
    p = plan_placement(spec, board, cards)
    budget = board.onchip_weight_budget
    rows = [
        {"card": i, "first_layer": r.start, "last_layer": r.stop - 1, "layers": len(r), "bytes": b, "utilization": b / budget}
        for i, (r, b) in enumerate(zip(p.ranges, p.card_bytes))
    ]
    data = {
        "model": spec.name,
        "board": board.name,
        "storage_bytes": spec.storage_bytes,
        "card_budget_bytes": budget,
        "capacity_lower_bound": lower,
        "cards": cards,
        "summary": p.describe(),
        "placement": rows,
    }

    def text(d):
        lines = [
            f"{spec.name} on {board.name}: {spec.storage_bytes / MB:,.0f} MB weights, {budget / MB:,.1f} MB per card",
            f"capacity bound {lower} cards; whole-layer placement: {p.describe()}",
            f"{'card':>4}  {'layers':>9}  {'MB':>8}  {'util':>6}",
        ]
        for r in rows:
            lines.append(
                f"{r['card']:>4}  {r['first_layer']:>4}-{r['last_layer']:<4}  {r['bytes'] / MB:>8.2f}  {r['utilization']:>6.1%}"
            )
        return "\n".join(lines)

    if args.format == "csv":
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    else:
        _emit(args.format, data, text, out)
    return EXIT_OK


def _variant(name: str) -> str:
    try:
        return VARIANT_ALIASES[name]
    except KeyError:
        raise UsageError(f"unknown variant {name!r}; use fully-on-chip or hbm-assisted") from None


def _calib(args) -> CalibrationConstants:
    return UNCALIBRATED if args.uncalibrated else CalibrationConstants()


def cmd_perf(args, out) -> int:
    spec = resolve_model(args.model or "370m")
    board = resolve_board(args.board)
    query = PerfQuery(spec, _variant(args.variant), args.batch, args.cards)
    roof = RooflineParams(args.eta)
    report = evaluate(query, board, roof, _calib(args))
    data = report.to_dict()
    base = reference_baseline(report)
    if base is not None:
        data["baseline"] = {"hardware": base.hardware, "tokens_per_s": base.tokens_per_s, "power_w": base.power_w}
    if args.node:
        f = NODE_SCALING[args.node]
        data["projected"] = {
            "node": args.node,
            "factor": f,
            "power_w": project_node_scaling(report.power_w, f),
            "efficiency": scaled_efficiency(report.efficiency, f),
        }

    def text(d):
        lines = [format_table([report], with_baselines=base is not None)]
        if base is not None:
            lines.append(f"baseline {base.hardware}: {base.tokens_per_s:,.0f} tk/s at {base.power_w} W")
        if query.variant == HBM:
            lines.append(f"batch threshold {batch_threshold(spec, board, roof, _calib(args)):.2f}")
        if args.node:
            pj = d["projected"]
            lines.append(f"{args.node} (x{pj['factor']}): {pj['power_w']:.1f} W, {pj['efficiency']:,.1f} tk/s/W")
        lines.append("dynamic power: " + ", ".join(f"{k} {v:g}%" for k, v in report.breakdown.items()))
        return "\n".join(lines)

    _emit(args.format, data, text, out)
    return EXIT_OK


def _parse_batches(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part or ".." in part:
                lo, hi = part.replace("..", "-").split("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"bad batch list {text!r}; use e.g. 1-16 or 1,2,4,8") from None
    if not out or min(out) < 1:
        raise UsageError("batches must be >= 1")
    return out


def cmd_roofline(args, out) -> int:
    spec = resolve_model(args.model or "1.3b")
    board = resolve_board(args.board)
    roof, calib = RooflineParams(args.eta), _calib(args)
    batches = _parse_batches(args.batches)
    mem1 = memory_bound_tps(spec, board, roof)
    comp = compute_bound_tps(spec, board, calib)
    rows = [
        {
            "batch": r.batch,
            "intensity": r.intensity,
            "tokens_per_s": r.tokens_per_s,
            "regime": r.regime,
            "memory_ceiling": r.batch * mem1,
            "compute_ceiling": comp,
        }
        for r in roofline_sweep(spec, board, batches, roof, calib)
    ]
    fmt = args.format if args.format != "text" or args.format_given else "csv"
    if fmt == "json":
        json.dump({"model": spec.name, "board": board.name, "threshold": comp / mem1, "rows": rows}, out, indent=2)
        out.write("\n")
    elif fmt == "csv":
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r | {k: f"{v:.6g}" for k, v in r.items() if isinstance(v, float)})
    else:
        out.write(f"{spec.name} on {board.name}: threshold batch {comp / mem1:.2f}\n")
        for r in rows:
            out.write(f"B={r['batch']:>3}  AI={r['intensity']:>6g} op/B  {r['tokens_per_s']:>9,.0f} tk/s  {r['regime']}\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "json", "csv"), default=None)
    common.add_argument("--out")
    common.add_argument("--seed", type=int, default=0)

    model = _Parser(add_help=False)
    model.add_argument("--model", help=f"preset ({', '.join(MODEL_PRESETS)}), manifest, or model directory")
    model.add_argument("--board", default="u280", help="board preset or key = value config file")

    p = _Parser(prog="ternsim", description="Ternary LLM accelerator model: codec, functional decode, perf/power.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pack", parents=[common], help="pack .npy/.npz trits (or a manifest) into 1.6-bit form")
    s.add_argument("input")
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("unpack", parents=[common], help="unpack a weight file to .npz")
    s.add_argument("input")
    s.set_defaults(func=cmd_unpack)

    s = sub.add_parser("gen-model", parents=[common, model], help="write a random model directory")
    s.add_argument("--dim", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--zero-prob", type=float, default=1 / 3)
    s.add_argument("--manifest-only", action="store_true")
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("run", parents=[common, model], help="decode random inputs through a model directory")
    s.add_argument("--steps", type=int, default=8)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--verify", action="store_true")
    s.add_argument("--threshold", type=float, default=VERIFY_THRESHOLD)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("plan", parents=[common, model], help="place layers on fully on-chip cards")
    s.add_argument("--cards", type=int)
    s.set_defaults(func=cmd_plan)

    for name, func, help_ in (
        ("perf", cmd_perf, "throughput, power and efficiency for one configuration"),
        ("roofline", cmd_roofline, "HBM roofline sweep over batch sizes (CSV by default)"),
    ):
        s = sub.add_parser(name, parents=[common, model], help=help_)
        s.add_argument("--eta", type=float, default=RooflineParams().hbm_efficiency, help="HBM efficiency")
        s.add_argument("--uncalibrated", action="store_true", help="drop the fitted per-layer overhead")
        s.set_defaults(func=func)
    perf = sub.choices["perf"]
    perf.add_argument("--variant", default=ON_CHIP, help="fully-on-chip | hbm-assisted")
    perf.add_argument("--batch", type=int, default=1)
    perf.add_argument("--cards", type=int)
    perf.add_argument("--node", choices=sorted(NODE_SCALING))
    sub.choices["roofline"].add_argument("--batches", default="1-16")
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        args.format_given = args.format is not None
        args.format = args.format or "text"
        return args.func(args, out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as e:
        print(f"capacity error: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except (FormatError, OSError, ValueError) as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except TernsimError as e:  # pragma: no cover - every subclass is mapped above
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
