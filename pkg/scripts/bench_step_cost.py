#!/usr/bin/env python3
"""Per-step training cost of each cell at equal dimensions.

Times one full optimizer step (forward, backward, parameter update) on a
fixed random batch with a scalar regression head, so the comparison isolates
the recurrent cell rather than the readout.  Reports milliseconds per step
(best of several repeats) and the cost ratio of every cell to the cheapest.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from rnnlab.cells import CELL_KINDS, init_params, tensors
from rnnlab.grad import LossSpec, bptt, init_head
from rnnlab.numerics import Rng
from rnnlab.optim import OptimizerSpec, apply_update, init_state


def time_cell(kind: str, d_h: int, d_x: int, T: int, B: int,
              steps: int, repeats: int, seed: int = 0) -> float:
    """Best-of-``repeats`` seconds per optimizer step for one cell."""
    rng = Rng(seed)
    params = init_params(kind, d_x, d_h, rng.spawn(0))
    head = init_head(1, d_h, rng.spawn(1))
    x = rng.spawn(2).normal(T, B, d_x)
    targets = rng.spawn(3).normal(T, B, 1)
    mask = np.zeros((T, B), dtype=bool)
    mask[-1] = True
    spec = LossSpec(kind="mse", n_out=1)
    opt = OptimizerSpec(kind="sgd", lr=1e-4, clip_norm=None,
                        batch_size=B, total_steps=steps)

    # flat maps optimizer keys to the live arrays inside params/head, so
    # copying the updated values back in place advances the model without
    # rebuilding the dataclasses every step.
    flat = {f"cell.{k}": v for k, v in tensors(params).items()}
    flat["head.W_out"] = head.W_out
    flat["head.b_out"] = head.b_out
    state = init_state(flat)

    def run_once() -> float:
        t0 = time.perf_counter()
        for _ in range(steps):
            _, grads, _ = bptt(kind, params, head, x, targets, spec,
                               target_mask=mask)
            new = apply_update(opt, flat, grads, state)
            for k, arr in flat.items():
                arr[...] = new[k]
        return (time.perf_counter() - t0) / steps

    run_once()  # warm up caches and the allocator
    return min(run_once() for _ in range(repeats))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d-h", type=int, default=128)
    ap.add_argument("--d-x", type=int, default=128)
    ap.add_argument("--seq-len", type=int, default=32)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--steps", type=int, default=10, help="steps per timed run")
    ap.add_argument("--repeats", type=int, default=5, help="timed runs; best is kept")
    ap.add_argument("--cells", nargs="+", default=list(CELL_KINDS), choices=CELL_KINDS)
    args = ap.parse_args(argv)

    results = {}
    for kind in args.cells:
        results[kind] = time_cell(kind, args.d_h, args.d_x, args.seq_len,
                                  args.batch, args.steps, args.repeats)
    cheapest = min(results.values())
    print(f"step cost at d_h={args.d_h} d_x={args.d_x} T={args.seq_len} B={args.batch} "
          f"(best of {args.repeats} x {args.steps} steps)")
    for kind, sec in sorted(results.items(), key=lambda kv: kv[1]):
        print(f"  {kind:8s} {sec * 1e3:8.3f} ms/step  ({sec / cheapest:4.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
