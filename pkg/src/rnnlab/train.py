"""Desk-scale training loop with periodic evaluation and spectrum probes.

A run is fully determined by (task, settings, optimizer, probe config): all
randomness flows from one seed through tagged child streams (init, data,
eval, one per probe step), so a repeated run reproduces every file byte for
byte.  The loop trains on freshly generated batches, evaluates ranking
metrics on a held-out set every ``eval_every`` steps, and records the
input-output Jacobian singular-value spectrum of the current cell parameters
at step 0, at any configured interval, and at the final step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cells import (
    CELL_KINDS,
    NonFiniteStateError,
    init_params,
    load_params,
    save_params,
    tensors,
)
from .grad import (
    EmbeddingTables,
    Head,
    LossSpec,
    bptt,
    bptt_embedded,
    init_head,
    softmax_ce_loss,
)
from .numerics import Rng, gaussian
from .optim import OptimizerSpec, apply_update, init_state
from .probe import PERCENTILE_NAMES, ProbeConfig, ProbeReport, spectrum
from .tasks import Dataset, TaskSpec, generate, map_at_k

# child-stream tags; probes use _TAG_PROBE + step so every probe is
# reproducible from (seed, step) alone
_TAG_INIT = 1
_TAG_DATA = 2
_TAG_EVAL = 3
_TAG_PROBE = 1_000_000

METRICS_HEADER = ["step", "loss", "accuracy", "map_at_20", "wall_clock_s"]
PERCENTILES_HEADER = ["step", "cell", "k"] + list(PERCENTILE_NAMES)
SPECTRA_HEADER = ["cell", "step", "k", "seq_id", "sv_rank", "value"]


class RunDivergedError(RuntimeError):
    """Training produced non-finite values; ``step`` is the failing step."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass
class TrainSettings:
    cell: str = "minimal"
    d_h: int = 32
    d_emb_item: int = 32
    d_emb_ctx: int = 8
    seed: int = 0
    eval_every: int = 1000
    n_eval: int = 512
    on_divergence: str = "abort"  # "record" stops the run and flags it instead

    def __post_init__(self):
        if self.cell not in CELL_KINDS:
            raise ValueError(f"unknown cell {self.cell!r}, expected one of {CELL_KINDS}")
        if self.d_h < 1 or self.d_emb_item < 1 or self.d_emb_ctx < 1:
            raise ValueError("d_h and embedding dims must be >= 1")
        if self.eval_every < 1 or self.n_eval < 1:
            raise ValueError("eval_every and n_eval must be >= 1")
        if self.on_divergence not in ("abort", "record"):
            raise ValueError("on_divergence must be 'abort' or 'record'")


@dataclass
class Model:
    """Cell parameters plus task-facing layers (embeddings, linear readout)."""

    kind: str
    params: object
    head: Head
    emb: EmbeddingTables | None
    loss: LossSpec


@dataclass
class MetricRecord:
    step: int
    loss: float
    accuracy: float | None
    map_at_20: float | None
    wall_clock_s: float


@dataclass
class TrainResult:
    task: TaskSpec
    settings: TrainSettings
    optimizer: OptimizerSpec
    model: Model
    metrics: list[MetricRecord] = field(default_factory=list)
    probes: list[ProbeReport] = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def final_metric(self) -> MetricRecord:
        return self.metrics[-1]


def build_model(task: TaskSpec, cell: str, d_h: int, rng: Rng,
                d_emb_item: int = 32, d_emb_ctx: int = 8) -> Model:
    """Model for a task: token tasks get embeddings, adding reads raw pairs."""
    if task.kind == "next_item":
        emb = EmbeddingTables(
            item=gaussian(task.vocab, d_emb_item, 1.0 / np.sqrt(d_emb_item), rng),
            ctx=gaussian(task.n_pages, d_emb_ctx, 1.0 / np.sqrt(d_emb_ctx), rng),
        )
        loss = LossSpec(kind="softmax_ce", vocab=task.vocab)
    elif task.kind == "copy":
        emb = EmbeddingTables(
            item=gaussian(task.token_vocab, d_emb_item, 1.0 / np.sqrt(d_emb_item), rng),
            ctx=None,
        )
        loss = LossSpec(kind="softmax_ce", vocab=task.token_vocab)
    else:
        emb = None
        loss = LossSpec(kind="mse", n_out=1)
    d_x = emb.d_x if emb is not None else 2
    params = init_params(cell, d_x, d_h, rng)
    head = init_head(loss.out_dim, d_h, rng)
    return Model(kind=cell, params=params, head=head, emb=emb, loss=loss)


def flat_tensors(model: Model) -> dict[str, np.ndarray]:
    """All trainable arrays as one ``section.name -> array`` dict."""
    out = {f"cell.{k}": v for k, v in tensors(model.params).items()}
    out["head.W_out"] = model.head.W_out
    out["head.b_out"] = model.head.b_out
    if model.emb is not None:
        out["emb.item"] = model.emb.item
        if model.emb.ctx is not None:
            out["emb.ctx"] = model.emb.ctx
    return out


def rebuild_model(model: Model, flat: dict[str, np.ndarray]) -> Model:
    """New Model with arrays taken from a flat dict (inverse of flat_tensors)."""
    cell_kwargs = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("cell.")}
    params = type(model.params)(**cell_kwargs)
    head = Head(W_out=flat["head.W_out"], b_out=flat["head.b_out"])
    emb = None
    if model.emb is not None:
        emb = EmbeddingTables(item=flat["emb.item"], ctx=flat.get("emb.ctx"))
    return Model(kind=model.kind, params=params, head=head, emb=emb, loss=model.loss)


def make_batch(task: TaskSpec, n: int, rng: Rng) -> dict:
    """Fresh time-major training batch; keys depend on the task family."""
    ds = generate(task, n, rng)
    if task.kind == "next_item":
        return {
            "items": ds.items[:, :-1].T,
            "ctx": ds.pages[:, :-1].T,
            "targets": ds.items[:, 1:].T,
        }
    if task.kind == "copy":
        T = task.total_len
        recall_from = task.payload_len + task.delay
        targets = np.full((T, n), -1, dtype=np.int64)
        targets[recall_from:, :] = ds.targets_tok.T[recall_from:, :]
        return {"items": ds.items.T, "ctx": None, "targets": targets}
    T = task.seq_len
    targets = np.zeros((T, n, 1))
    targets[-1, :, 0] = ds.targets_val
    mask = np.zeros((T, n), dtype=bool)
    mask[-1, :] = True
    return {"x": ds.x_real.transpose(1, 0, 2), "targets": targets, "mask": mask}


def loss_and_grads(model: Model, batch: dict):
    if model.emb is not None:
        return bptt_embedded(model.kind, model.params, model.head, model.emb,
                             batch["items"], batch["ctx"], batch["targets"], model.loss)
    value, grads, _ = bptt(model.kind, model.params, model.head,
                           batch["x"], batch["targets"], model.loss,
                           target_mask=batch["mask"])
    return value, grads


def _embed(emb: EmbeddingTables, items: np.ndarray, ctx: np.ndarray | None) -> np.ndarray:
    parts = [emb.item[items]]
    if emb.ctx is not None:
        parts.append(emb.ctx[ctx])
    return np.concatenate(parts, axis=2)


def evaluate(model: Model, task: TaskSpec, ds: Dataset, chunk: int = 64) -> MetricRecord:
    """Loss / accuracy / ranking quality on a held-out set, in chunks.

    next_item scores every next-event prediction; copy scores only the recall
    region; adding reports MSE only.  The returned record has step and
    wall_clock_s zeroed; the caller fills them in.
    """
    from .grad import forward_batch

    n = len(ds)
    loss_sum = 0.0
    loss_n = 0
    correct = 0
    ap_sum = 0.0
    rank_events = 0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        if task.kind == "adding":
            x = ds.x_real[lo:hi].transpose(1, 0, 2)
            T, B, _ = x.shape
            hs, _ = forward_batch(model.kind, model.params, x)
            preds = hs[-1] @ model.head.W_out.T + model.head.b_out
            diff2 = (preds[:, 0] - ds.targets_val[lo:hi]) ** 2
            loss_sum += float(diff2.sum())
            loss_n += B
            continue
        if task.kind == "next_item":
            items = ds.items[lo:hi, :-1].T
            ctx = ds.pages[lo:hi, :-1].T
            targets = ds.items[lo:hi, 1:].T
        else:
            T_all = task.total_len
            recall_from = task.payload_len + task.delay
            items = ds.items[lo:hi].T
            ctx = None
            targets = np.full((T_all, hi - lo), -1, dtype=np.int64)
            targets[recall_from:, :] = ds.targets_tok[lo:hi].T[recall_from:, :]
        x = _embed(model.emb, items, ctx)
        T, B, _ = x.shape
        hs, _ = forward_batch(model.kind, model.params, x)
        logits = hs[1:].reshape(T * B, -1) @ model.head.W_out.T + model.head.b_out
        tflat = targets.reshape(T * B)
        value, _ = softmax_ce_loss(logits, tflat)
        pred_mask = tflat >= 0
        n_pred = int(pred_mask.sum())
        loss_sum += value * n_pred
        loss_n += n_pred
        correct += int((logits[pred_mask].argmax(axis=1) == tflat[pred_mask]).sum())
        if task.kind == "next_item":
            ap_sum += map_at_k(logits[pred_mask], tflat[pred_mask], 20) * n_pred
            rank_events += n_pred
    loss = loss_sum / max(loss_n, 1)
    if task.kind == "adding":
        return MetricRecord(0, loss, None, None, 0.0)
    acc = correct / max(loss_n, 1)
    map20 = ap_sum / rank_events if rank_events else None
    return MetricRecord(0, loss, acc, map20, 0.0)


def _due_steps(total: int, every: int | None) -> set[int]:
    due = {0, total}
    if every is not None:
        due.update(range(0, total + 1, every))
    return due


def train_loop(task: TaskSpec, settings: TrainSettings, opt: OptimizerSpec,
               probe_cfg: ProbeConfig | None = None, log=None) -> TrainResult:
    """Run one experiment; returns metrics, probe reports, and final model.

    On non-finite loss or state the run either raises :class:`RunDivergedError`
    (``on_divergence="abort"``) or stops early with ``diverged_at`` set.
    """
    master = Rng(settings.seed)
    model = build_model(task, settings.cell, settings.d_h, master.spawn(_TAG_INIT),
                        settings.d_emb_item, settings.d_emb_ctx)
    rng_data = master.spawn(_TAG_DATA)
    eval_ds = generate(task, settings.n_eval, master.spawn(_TAG_EVAL))

    flat = flat_tensors(model)
    state = init_state(flat)
    probe_steps = _due_steps(opt.total_steps, probe_cfg.every) if probe_cfg else set()
    eval_steps = _due_steps(opt.total_steps, settings.eval_every)

    result = TrainResult(task=task, settings=settings, optimizer=opt, model=model)
    t0 = time.perf_counter()

    def take_probe(step: int):
        rng = master.spawn(_TAG_PROBE + step)
        result.probes.append(spectrum(model.kind, model.params, probe_cfg, rng, step=step))

    def take_eval(step: int):
        rec = evaluate(model, task, eval_ds)
        rec.step = step
        rec.wall_clock_s = time.perf_counter() - t0
        result.metrics.append(rec)
        if log is not None:
            log(rec)

    if 0 in probe_steps:
        take_probe(0)
    if 0 in eval_steps:
        take_eval(0)

    for step in range(1, opt.total_steps + 1):
        batch = make_batch(task, opt.batch_size, rng_data)
        try:
            _, grads = loss_and_grads(model, batch)
        except (NonFiniteStateError, FloatingPointError) as e:
            if settings.on_divergence == "abort":
                raise RunDivergedError(
                    f"{settings.cell} run diverged at step {step}: {e}", step
                ) from e
            result.diverged_at = step
            break
        flat = apply_update(opt, flat, grads, state)
        model = rebuild_model(model, flat)
        if step in probe_steps:
            take_probe(step)
        if step in eval_steps:
            take_eval(step)

    result.model = model
    return result


def metrics_rows(result: TrainResult, deterministic: bool = False) -> list[tuple]:
    """Rows for the metrics CSV; ``deterministic`` zeroes wall-clock times."""
    rows = []
    for m in result.metrics:
        rows.append((
            m.step,
            float(m.loss),
            "" if m.accuracy is None else float(m.accuracy),
            "" if m.map_at_20 is None else float(m.map_at_20),
            0.0 if deterministic else float(m.wall_clock_s),
        ))
    return rows


def percentile_rows(reports: list[ProbeReport]) -> list[tuple]:
    """Rows for the percentile CSV, ordered by (step, cell, k)."""
    rows = []
    for rep in sorted(reports, key=lambda r: (r.step, r.cell)):
        for s in sorted(rep.summaries, key=lambda s: s.k):
            rows.append((s.step, s.cell, s.k) + tuple(float(v) for v in s.percentiles))
    return rows


def spectra_rows(reports: list[ProbeReport]) -> list[tuple]:
    """Rows for the raw per-sequence singular-value CSV (rank 1 = largest)."""
    rows = []
    for rep in sorted(reports, key=lambda r: (r.step, r.cell)):
        for k, seq_id, values in rep.raw:
            for rank, v in enumerate(values, start=1):
                rows.append((rep.cell, rep.step, k, seq_id, rank, float(v)))
    return rows


def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    """One .npz with the cell tensors plus readout / embedding extras.

    The file stays loadable by :func:`rnnlab.cells.load_params`, which sees
    only the cell; :func:`load_checkpoint` restores the full model.
    """
    extras = {"head.W_out": model.head.W_out, "head.b_out": model.head.b_out}
    if model.emb is not None:
        extras["emb.item"] = model.emb.item
        if model.emb.ctx is not None:
            extras["emb.ctx"] = model.emb.ctx
    m = dict(meta or {})
    m["loss"] = {"kind": model.loss.kind, "vocab": model.loss.vocab, "n_out": model.loss.n_out}
    save_params(path, model.kind, model.params, m, extras)


def load_checkpoint(path) -> tuple[Model, dict]:
    kind, params, meta = load_params(path)
    with np.load(path) as data:
        head = Head(W_out=np.array(data["head.W_out"]), b_out=np.array(data["head.b_out"]))
        emb = None
        if "emb.item" in data:
            ctx = np.array(data["emb.ctx"]) if "emb.ctx" in data else None
            emb = EmbeddingTables(item=np.array(data["emb.item"]), ctx=ctx)
    info = meta.get("loss", {})
    loss = LossSpec(kind=info.get("kind", "softmax_ce"), vocab=info.get("vocab"),
                    n_out=info.get("n_out", 1))
    return Model(kind=kind, params=params, head=head, emb=emb, loss=loss), meta
