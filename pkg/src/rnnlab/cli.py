"""Command-line front end.

Four verbs, each printing one summary line per run and exiting nonzero iff
any run failed:

* ``probe-init``: singular-value spectra of freshly initialized cells.
* ``train``: full training runs (metrics, spectra, checkpoint per run).
* ``export-weights``: checkpoint tensors as per-tensor CSVs plus a JSON
  sidecar describing shapes and input column blocks.
* ``jacobian-check``: analytic step Jacobians of a checkpoint against
  finite differences.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import train as train_mod
from .cells import init_params, load_params, rollout, state_jacobian, step as cell_step, tensors
from .grad import fd_jacobian
from .io import atomic_write_text, write_csv
from .numerics import Rng
from .probe import ProbeConfig, chain_jacobian, spectrum
from .train import (
    METRICS_HEADER,
    PERCENTILES_HEADER,
    SPECTRA_HEADER,
    RunDivergedError,
    metrics_rows,
    percentile_rows,
    save_checkpoint,
    spectra_rows,
    train_loop,
)


def _add_common(p: argparse.ArgumentParser, need_config: bool = True):
    p.add_argument("--config", required=need_config, help="YAML experiment config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
    p.add_argument("--deterministic", action="store_true",
                   help="omit wall-clock times so repeated runs are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnnlab",
                                description="recurrent-cell trainability workbench")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("probe-init", help="spectra of freshly initialized cells")
    _add_common(sp)

    st = sub.add_parser("train", help="train cells and record metrics + spectra")
    _add_common(st)

    se = sub.add_parser("export-weights", help="dump checkpoint tensors to CSV")
    se.add_argument("--checkpoint", required=True, help="checkpoint .npz")
    se.add_argument("--out", required=True, help="output directory")

    sj = sub.add_parser("jacobian-check", help="analytic vs finite-difference Jacobians")
    sj.add_argument("--checkpoint", required=True, help="checkpoint .npz")
    sj.add_argument("--seq-len", type=int, default=12)
    sj.add_argument("--lookback", type=int, default=5)
    sj.add_argument("--tolerance", type=float, default=1e-5)
    sj.add_argument("--seed", type=int, default=0)
    return p


def cmd_probe_init(args) -> int:
    cfg = config_mod.load_config(args.config)
    probe_cfg = cfg.probe if cfg.probe is not None else ProbeConfig()
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = Path(args.out)
    reports = []
    for cell in cfg.cells:
        master = Rng(seed)
        params = init_params(cell, probe_cfg.d_x, cfg.model.d_h, master.spawn(1))
        report = spectrum(cell, params, probe_cfg, master.spawn(1_000_000), step=0)
        reports.append(report)
        top_k = max(probe_cfg.lookbacks)
        med = next(s.percentiles[4] for s in report.summaries if s.k == top_k)
        print(f"probe-init cell={cell} seed={seed} d_h={cfg.model.d_h} "
              f"d_x={probe_cfg.d_x} median_sv(k={top_k})={med:.3e} -> {out}")
    write_csv(out / "percentiles.csv", PERCENTILES_HEADER, percentile_rows(reports))
    write_csv(out / "spectra.csv", SPECTRA_HEADER, spectra_rows(reports))
    return 0


def _input_blocks(model: train_mod.Model) -> list:
    if model.emb is None:
        return [["x", 0, model.params.d_x]]
    d_item = model.emb.item.shape[1]
    blocks = [["item", 0, d_item]]
    if model.emb.ctx is not None:
        blocks.append(["page", d_item, d_item + model.emb.ctx.shape[1]])
    return blocks


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config)
    if args.seed is not None:
        cfg = config_mod.ExperimentConfig(
            task=cfg.task, model=cfg.model, optimizer=cfg.optimizer, probe=cfg.probe,
            cells=cfg.cells, seeds=(args.seed,))
    out = Path(args.out)
    failed = 0
    for cell, seed, settings in cfg.runs():
        run_dir = out / f"{cell}-seed{seed}"
        status = "ok"
        try:
            result = train_loop(cfg.task, settings, cfg.optimizer, cfg.probe)
        except RunDivergedError as e:
            print(f"train cell={cell} seed={seed} FAILED: {e}", file=sys.stderr)
            failed += 1
            continue
        if result.diverged_at is not None:
            status = f"diverged@{result.diverged_at}"
            failed += 1
        write_csv(run_dir / "metrics.csv", METRICS_HEADER,
                  metrics_rows(result, deterministic=args.deterministic))
        if result.probes:
            write_csv(run_dir / "percentiles.csv", PERCENTILES_HEADER,
                      percentile_rows(result.probes))
            write_csv(run_dir / "spectra.csv", SPECTRA_HEADER, spectra_rows(result.probes))
        meta = {
            "task": cfg.task.kind,
            "cell": cell,
            "seed": seed,
            "steps": cfg.optimizer.total_steps,
            "diverged_at": result.diverged_at,
            "input_blocks": _input_blocks(result.model),
        }
        save_checkpoint(run_dir / "checkpoint.npz", result.model, meta)
        m = result.final_metric
        extra = f" map@20={m.map_at_20:.4f}" if m.map_at_20 is not None else ""
        print(f"train cell={cell} seed={seed} steps={m.step} loss={m.loss:.4f}"
              f"{extra} status={status} -> {run_dir}")
    return 1 if failed else 0


def cmd_export_weights(args) -> int:
    kind, params, meta = load_params(args.checkpoint)
    out = Path(args.out)
    ts = tensors(params)
    sidecar = {
        "cell_kind": kind,
        "d_h": params.d_h,
        "d_x": params.d_x,
        "input_blocks": meta.get("input_blocks", [["x", 0, params.d_x]]),
        "tensors": {},
        "meta": meta,
    }
    for name, t in ts.items():
        mat = np.atleast_2d(np.asarray(t, dtype=np.float64))
        header = [f"c{j}" for j in range(mat.shape[1])]
        write_csv(out / f"{name}.csv", header, [tuple(row) for row in mat.tolist()])
        sidecar["tensors"][name] = {"shape": list(t.shape), "file": f"{name}.csv"}
    atomic_write_text(out / "weights.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"export-weights cell={kind} tensors={len(ts)} -> {out}")
    return 0


def cmd_jacobian_check(args) -> int:
    kind, params, _ = load_params(args.checkpoint)
    T = args.seq_len
    if T < 2 or args.lookback < 0 or args.lookback >= T:
        print("error: need seq-len >= 2 and 0 <= lookback < seq-len", file=sys.stderr)
        return 2
    rng = Rng(args.seed)
    xs = rng.normal(T, params.d_x)
    trace = rollout(kind, params, np.zeros(params.d_h), xs)

    worst = 0.0
    for i in range(1, T + 1):
        analytic = state_jacobian(kind, params, trace, i)
        h_prev = trace.step(i).h_prev
        x_i = xs[i - 1]
        fd = fd_jacobian(lambda h: cell_step(kind, params, h, x_i)[0], h_prev)
        err = np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd))
        worst = max(worst, err)

    k = args.lookback
    analytic = chain_jacobian(kind, params, trace, T, k)

    def final_state(x_flat):
        xs2 = xs.copy()
        xs2[T - k - 1] = x_flat
        return rollout(kind, params, np.zeros(params.d_h), xs2).h_final

    fd = fd_jacobian(final_state, xs[T - k - 1].copy())
    err = np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd))
    worst = max(worst, err)

    ok = worst <= args.tolerance
    print(f"jacobian-check cell={kind} d_h={params.d_h} T={T} k={k} "
          f"max_rel_err={worst:.3e} tol={args.tolerance:.1e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "probe-init": cmd_probe_init,
        "train": cmd_train,
        "export-weights": cmd_export_weights,
        "jacobian-check": cmd_jacobian_check,
    }
    try:
        return handlers[args.command](args)
    except config_mod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
