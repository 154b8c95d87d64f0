"""Synthetic sequence tasks and ranking metrics.

Three desk-scale tasks stand in for large-scale sequential prediction:

* ``next_item``: random walks on a block-structured Markov chain.  Items are
  grouped into equal blocks; from item (block b, slot j) the next item is the
  in-block successor slot (j + successor_shift) % block_size with probability
  ``successor_mass``, uniform within the block up to ``within_block_mass``
  total in-block probability, and uniform over the whole vocabulary with the
  remaining mass.  Each step also carries a page-context id derived from the
  current block, so inputs are (item, page) token pairs.
* ``copy``: payload symbols, a blank delay, a recall cue, then the payload
  must be reproduced.  Token 0 is blank, token 1 the cue, symbols start at 2.
* ``adding``: real-valued (value, marker) pairs; exactly two positions are
  marked and the target is the sum of their values, predicted at the end.

Everything is generated from an :class:`~rnnlab.numerics.Rng`, so datasets are
deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng

TASK_KINDS = ("next_item", "copy", "adding")


@dataclass
class TaskSpec:
    """Task family plus its generator parameters (unused fields ignored)."""

    kind: str = "next_item"
    vocab: int = 1000          # item vocabulary (next_item) / alphabet size (copy)
    seq_len: int = 50          # session length (next_item) / total length (adding)
    n_blocks: int = 20
    within_block_mass: float = 0.9
    successor_mass: float = 0.7
    successor_shift: int = 1
    n_pages: int = 10
    payload_len: int = 8
    delay: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if self.kind == "next_item":
            if self.vocab < 2:
                raise ValueError("next_item: vocab must be >= 2")
            if self.vocab % self.n_blocks != 0:
                raise ValueError(
                    f"next_item: vocab {self.vocab} must divide into {self.n_blocks} equal blocks"
                )
            if not 0.0 <= self.successor_mass <= self.within_block_mass <= 1.0:
                raise ValueError("next_item: need 0 <= successor_mass <= within_block_mass <= 1")
            if self.seq_len < 2:
                raise ValueError("next_item: seq_len must be >= 2")
        if self.kind == "copy":
            if self.vocab < 2:
                raise ValueError("copy: alphabet must have >= 2 symbols")
            if self.payload_len < 1 or self.delay < 0:
                raise ValueError("copy: payload_len >= 1 and delay >= 0 required")
            if self.total_len < self.payload_len + self.delay:
                raise ValueError("copy: total length shorter than payload + delay")
        if self.kind == "adding" and self.seq_len < 2:
            raise ValueError("adding: seq_len must be >= 2")

    @property
    def block_size(self) -> int:
        return self.vocab // self.n_blocks

    @property
    def total_len(self) -> int:
        """Sequence length of one copy-task episode (payload, delay, recall)."""
        return 2 * self.payload_len + self.delay

    @property
    def token_vocab(self) -> int:
        """Size of the token space a categorical model must handle."""
        if self.kind == "copy":
            return self.vocab + 2  # blank + cue + alphabet
        return self.vocab


@dataclass
class Dataset:
    """Generated sequences in token or real-valued form.

    next_item: ``items`` (n, T) walks and ``pages`` (n, T); training pairs are
    items[:, :-1] -> items[:, 1:].
    copy: ``items`` (n, T) input tokens and ``targets_tok`` (n, T).
    adding: ``x_real`` (n, T, 2) and scalar ``targets_val`` (n,).
    """

    kind: str
    items: np.ndarray | None = None
    pages: np.ndarray | None = None
    targets_tok: np.ndarray | None = None
    x_real: np.ndarray | None = None
    targets_val: np.ndarray | None = None

    def __len__(self) -> int:
        arr = self.items if self.items is not None else self.x_real
        return 0 if arr is None else arr.shape[0]


def generate(task: TaskSpec, n: int, rng: Rng) -> Dataset:
    """n sequences of the given task, deterministic per rng seed."""
    if n < 1:
        raise ValueError(f"generate: n must be >= 1, got {n}")
    if task.kind == "next_item":
        return _generate_next_item(task, n, rng)
    if task.kind == "copy":
        return _generate_copy(task, n, rng)
    return _generate_adding(task, n, rng)


def _generate_next_item(task: TaskSpec, n: int, rng: Rng) -> Dataset:
    V, T, bs = task.vocab, task.seq_len, task.block_size
    p_succ = task.successor_mass
    p_block = task.within_block_mass
    items = np.empty((n, T), dtype=np.int64)
    items[:, 0] = rng.integers(V, size=n)
    # one uniform draw decides the branch, a second the landing slot
    branch = rng.uniform(n, T - 1)
    land = rng.uniform(n, T - 1)
    for t in range(1, T):
        cur = items[:, t - 1]
        block = cur // bs
        slot = cur % bs
        u = branch[:, t - 1]
        succ = block * bs + (slot + task.successor_shift) % bs
        within = block * bs + np.floor(land[:, t - 1] * bs).astype(np.int64)
        anywhere = np.floor(land[:, t - 1] * V).astype(np.int64)
        nxt = np.where(u < p_succ, succ, np.where(u < p_block, within, anywhere))
        items[:, t] = nxt
    pages = (items // bs) % task.n_pages
    return Dataset(kind="next_item", items=items, pages=pages)


def _generate_copy(task: TaskSpec, n: int, rng: Rng) -> Dataset:
    P, D, T = task.payload_len, task.delay, task.total_len
    blank, cue = 0, 1
    payload = rng.integers(task.vocab, size=n * P).reshape(n, P) + 2
    items = np.full((n, T), blank, dtype=np.int64)
    targets = np.full((n, T), blank, dtype=np.int64)
    items[:, :P] = payload
    if D >= 1:
        items[:, P + D - 1] = cue
    targets[:, P + D:] = payload
    return Dataset(kind="copy", items=items, targets_tok=targets)


def _generate_adding(task: TaskSpec, n: int, rng: Rng) -> Dataset:
    T = task.seq_len
    values = rng.uniform(n, T)
    first = rng.integers(T // 2, size=n)
    second = rng.integers(T - T // 2, size=n) + T // 2
    x = np.zeros((n, T, 2))
    x[:, :, 0] = values
    idx = np.arange(n)
    x[idx, first, 1] = 1.0
    x[idx, second, 1] = 1.0
    targets = values[idx, first] + values[idx, second]
    return Dataset(kind="adding", x_real=x, targets_val=targets)


def map_at_k(scores: np.ndarray, relevant: np.ndarray, k: int = 20) -> float:
    """Mean average precision at k with one relevant item per event.

    Per event this reduces to 1/rank of the relevant item if rank <= k, else
    0.  Ties in scores are broken by ascending item id, so the metric is
    deterministic and depends only on the ranking (any strictly monotone
    transformation of the scores leaves it unchanged).
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("map_at_k: need a non-empty (n_events, n_items) score matrix")
    if k < 1:
        raise ValueError("map_at_k: k must be >= 1")
    n, V = scores.shape
    s_true = scores[np.arange(n), relevant]
    better = (scores > s_true[:, None]).sum(axis=1)
    tied_before = ((scores == s_true[:, None]) & (np.arange(V)[None, :] < relevant[:, None])).sum(axis=1)
    rank = better + tied_before + 1
    ap = np.where(rank <= k, 1.0 / rank, 0.0)
    return float(ap.mean())


def popularity_scores(train_items: np.ndarray, vocab: int) -> np.ndarray:
    """Global item-frequency scores (the frequency-baseline predictor)."""
    return np.bincount(train_items.reshape(-1), minlength=vocab).astype(np.float64)
