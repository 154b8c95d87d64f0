#!/usr/bin/env python3
"""Baseline training runs for the comparative-training acceptance check.

Runs the exact acceptance protocol: next_item task at default scale (vocab
1000, 20 blocks, sessions of 50), MinimalRNN and GRU at d_h=32, adam with
default settings, batch 32, 20k steps, seeds 0/1/2.  Records final MAP@20
per run, per-cell means, the relative gap between the cells, and the
item-frequency baseline's MAP@20 on the same held-out sets.

Writes calibration/training_baseline.json.  Takes on the order of an hour on
one core; run from the repo root:

    python3 scripts/calibrate_training.py [--steps 20000]
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rnnlab import (  # noqa: E402
    OptimizerSpec,
    Rng,
    TaskSpec,
    TrainSettings,
    generate,
    map_at_k,
    popularity_scores,
    train_loop,
)

SEEDS = (0, 1, 2)
CELLS = ("minimal", "gru")


def baseline_map(task: TaskSpec, seed: int, n_train: int = 2000) -> float:
    """MAP@20 of ranking every event by global item frequency."""
    train = generate(task, n_train, Rng(seed).spawn(999))
    scores = popularity_scores(train.items, task.vocab)
    eval_ds = generate(task, 512, Rng(seed).spawn(3))
    relevant = eval_ds.items[:, 1:].reshape(-1)
    tiled = np.broadcast_to(scores, (relevant.size, task.vocab))
    return map_at_k(tiled, relevant, 20)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20000)
    args = ap.parse_args()

    task = TaskSpec(kind="next_item")
    opt = OptimizerSpec(kind="adam", total_steps=args.steps, batch_size=32)
    runs = []
    for cell in CELLS:
        for seed in SEEDS:
            settings = TrainSettings(cell=cell, d_h=32, seed=seed,
                                     eval_every=2000, n_eval=512)
            t0 = time.perf_counter()
            result = train_loop(task, settings, opt)
            wall = time.perf_counter() - t0
            final = result.final_metric
            runs.append({
                "cell": cell, "seed": seed, "steps": final.step,
                "final_map_at_20": final.map_at_20,
                "final_loss": final.loss,
                "final_accuracy": final.accuracy,
                "wall_s": round(wall, 1),
            })
            print(f"{cell} seed {seed}: map@20 {final.map_at_20:.4f} "
                  f"loss {final.loss:.4f} wall {wall:.0f}s", flush=True)

    means = {c: float(np.mean([r["final_map_at_20"] for r in runs if r["cell"] == c]))
             for c in CELLS}
    rel_gap = abs(means["minimal"] - means["gru"]) / means["gru"]
    baselines = {s: baseline_map(task, s) for s in SEEDS}

    record = {
        "protocol": {
            "task": "next_item defaults (vocab 1000, 20 blocks, seq_len 50)",
            "d_h": 32, "d_emb_item": 32, "d_emb_ctx": 8,
            "optimizer": "adam lr 1e-3, clip 5.0, batch 32",
            "steps": args.steps, "seeds": list(SEEDS), "n_eval": 512,
        },
        "runs": runs,
        "mean_final_map": means,
        "relative_gap_minimal_vs_gru": rel_gap,
        "frequency_baseline_map": baselines,
    }
    out_path = Path(__file__).resolve().parents[1] / "calibration" / "training_baseline.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(record, indent=2) + "\n")
    print(f"mean map@20: {means}  relative gap {rel_gap:.3%}")
    print(f"frequency baseline map@20: {baselines}")
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
