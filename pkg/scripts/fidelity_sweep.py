#!/usr/bin/env python3
"""Quantized decode vs the float oracle across depth, width and trit sparsity."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from ternsim.model import DecodeSession, generate, random_inputs, random_model
from ternsim.reference import float_reference_forward, relative_l2
from ternsim.specs import ModelSpec


def step_errors(dim: int, layers: int, steps: int, seed: int, p0: float) -> np.ndarray:
    spec = ModelSpec("sweep", dim, layers, 1e6)
    weights = random_model(spec, seed, p0)
    xs = random_inputs(spec, seed, steps)[0]
    q = generate(DecodeSession(spec, weights), xs)
    ref = float_reference_forward(weights, xs)
    return np.array([relative_l2(a.dequantize(), b) for a, b in zip(q, ref)])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", default="256,512")
    ap.add_argument("--layers", default="1,2,4,8")
    ap.add_argument("--p0", default="0.333,0.6")
    ap.add_argument("--steps", type=int, default=8)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["dim", "layers", "p0", "mean_rel_l2", "max_rel_l2", "last_step_mean"])
    for dim in map(int, args.dims.split(",")):
        for layers in map(int, args.layers.split(",")):
            for p0 in map(float, args.p0.split(",")):
                errs = np.stack([step_errors(dim, layers, args.steps, s, p0) for s in range(args.seeds)])
                w.writerow([dim, layers, p0, f"{errs.mean():.5f}", f"{errs.max():.5f}", f"{errs[:, -1].mean():.5f}"])
                sys.stdout.flush()


if __name__ == "__main__":
    main()
