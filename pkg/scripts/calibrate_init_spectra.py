#!/usr/bin/env python3
"""Baseline probe run for the init-spectra acceptance thresholds.

Runs the exact acceptance protocol (d_h = d_x = 64, standard-normal probe
inputs, 20 sequences, orthogonal-recurrence init with zero biases) over a few
seeds and records the statistics the acceptance test freezes:

* pooled-median ratio minimal/vanilla at k=25 (how much faster the vanilla
  chain collapses),
* max/min spread ratios for GRU and MinimalRNN at k=10,
* the largest MinimalRNN singular value at k=25.

The derived thresholds are conservative floors under the worst seed, written
to calibration/init_spectra_baseline.json.  Run from the repo root:

    python3 scripts/calibrate_init_spectra.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rnnlab import ProbeConfig, Rng, init_params, spectrum  # noqa: E402

SEEDS = (0, 1, 2)
D = 64


def one_seed(seed: int) -> dict:
    cfg = ProbeConfig(lookbacks=(0, 5, 10, 25), seq_len=26, n_seqs=20, d_x=D)
    out = {}
    for cell in ("vanilla", "gru", "cfn", "minimal"):
        master = Rng(seed)
        params = init_params(cell, D, D, master.spawn(1))
        rep = spectrum(cell, params, cfg, master.spawn(1_000_000), step=0)
        out[cell] = {s.k: s for s in rep.summaries}

    def median(cell, k):
        return out[cell][k].percentiles[4]

    def geo_mean(cell, k):
        v = np.maximum(out[cell][k].values, 1e-300)
        return float(np.exp(np.mean(np.log(v))))

    def spread(cell, k):
        s = out[cell][k]
        positive = s.values[s.values > 0.0]
        return float(positive.max() / positive.min())

    return {
        "seed": seed,
        "median_k25": {c: median(c, 25) for c in out},
        "geo_mean_k25": {c: geo_mean(c, 25) for c in out},
        "median_ratio_minimal_over_vanilla_k25": median("minimal", 25) / median("vanilla", 25),
        "geo_ratio_minimal_over_vanilla_k25": geo_mean("minimal", 25) / geo_mean("vanilla", 25),
        "spread_k10": {"gru": spread("gru", 10), "minimal": spread("minimal", 10)},
        "max_minimal_k25": out["minimal"][25].percentiles[8],
    }


def main() -> int:
    results = [one_seed(s) for s in SEEDS]
    ratios = [r["median_ratio_minimal_over_vanilla_k25"] for r in results]
    geo_ratios = [r["geo_ratio_minimal_over_vanilla_k25"] for r in results]
    spreads_ok = [r["spread_k10"]["gru"] > r["spread_k10"]["minimal"] for r in results]
    max_vals = [r["max_minimal_k25"] for r in results]

    # freeze floors ~20% (median) and ~50% (geo mean) under the worst seed
    worst_ratio = min(ratios)
    derived_ratio_floor = float(np.floor(worst_ratio / 1.2 * 10.0) / 10.0)
    derived_geo_floor = float(np.floor(min(geo_ratios) / 2.0))

    record = {
        "protocol": {
            "d_h": D, "d_x": D, "n_seqs": 20, "seq_len": 26,
            "lookbacks": [0, 5, 10, 25], "input": "standard normal",
            "init": "orthogonal square matrices, Gaussian 1/sqrt(d_x) inputs, zero biases",
            "seeds": list(SEEDS),
        },
        "per_seed": results,
        "derived": {
            "median_ratio_floor_k25": derived_ratio_floor,
            "worst_observed_ratio": worst_ratio,
            "geo_ratio_floor_k25": derived_geo_floor,
            "worst_observed_geo_ratio": min(geo_ratios),
            "gru_spread_exceeds_minimal_all_seeds": all(spreads_ok),
            "max_minimal_k25_worst": max(max_vals),
        },
        "notes": (
            "The vanilla chain collapses anisotropically: its pooled k=25 "
            "distribution spans ~7 decades, so its median sits well above its "
            "geometric mean.  The pooled-median ratio below is therefore much "
            "smaller than the ~10x a uniform-contraction idealization (state "
            "Jacobian = D(u) exactly) predicts; geometric-mean ratios exceed "
            "70x on every seed.  The acceptance test freezes the floor derived "
            "from the measured medians."
        ),
    }
    out_path = Path(__file__).resolve().parents[1] / "calibration" / "init_spectra_baseline.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(record, indent=2) + "\n")
    for r in results:
        print(f"seed {r['seed']}: median ratio {r['median_ratio_minimal_over_vanilla_k25']:.2f}x  "
              f"geo ratio {r['geo_ratio_minimal_over_vanilla_k25']:.1f}x  "
              f"gru/minimal spread {r['spread_k10']['gru']:.2e}/{r['spread_k10']['minimal']:.2e}  "
              f"minimal max(k=25) {r['max_minimal_k25']:.2e}")
    print(f"derived floors: median ratio {derived_ratio_floor}, geo ratio {derived_geo_floor}")
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
