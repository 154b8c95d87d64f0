"""Input-output Jacobian spectra: how error signals stretch or shrink in time.

``chain_jacobian`` composes the per-step state Jacobians with the input-side
factors to get d h_T / d x_{T-k}; ``spectrum`` runs rollouts on freshly drawn
probe inputs, collects singular values per lookback k, and summarizes the
pooled values at the fixed percentile levels used by the percentile exports
(minimum, 7%, 16%, 31%, 50%, 69%, 84%, 93%, maximum).

Probe inputs default to i.i.d. standard normal entries: a neutral,
scale-controlled stimulus.  Singular values are pooled across probe sequences
before percentiles are taken; raw per-sequence values are kept alongside so
downstream consumers can re-bin or re-aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .cells import RolloutTrace, input_jacobians, rollout, state_jacobian
from .numerics import Rng, svd_values

PERCENTILE_LEVELS = (0.0, 0.07, 0.16, 0.31, 0.50, 0.69, 0.84, 0.93, 1.0)
PERCENTILE_NAMES = ("min", "p07", "p16", "p31", "p50", "p69", "p84", "p93", "max")


@dataclass
class ProbeConfig:
    """Spectrum-probe settings.

    lookbacks: list of k values (derivative w.r.t. the input k steps back).
    seq_len: rollout length T; every k must satisfy k < T.
    n_seqs: independent probe sequences pooled per measurement.
    input_scale: std-dev of the i.i.d. normal probe inputs.
    every: take a probe every N training steps (None = only step 0 and final).
    d_x: input width for probes of freshly initialized cells; probes taken
        during training use the trained model's input width instead.
    """

    lookbacks: tuple[int, ...] = (0, 5, 10, 25)
    seq_len: int = 26
    n_seqs: int = 20
    input_scale: float = 1.0
    every: int | None = None
    d_x: int = 64

    def __post_init__(self):
        self.lookbacks = tuple(int(k) for k in self.lookbacks)
        if self.seq_len < 1 or self.n_seqs < 1:
            raise ValueError("probe: seq_len and n_seqs must be >= 1")
        if self.input_scale <= 0:
            raise ValueError("probe: input_scale must be > 0")
        if self.d_x < 1:
            raise ValueError("probe: d_x must be >= 1")
        if self.every is not None and self.every < 1:
            raise ValueError("probe: schedule interval must be >= 1")
        for k in self.lookbacks:
            if k < 0 or k >= self.seq_len:
                raise ValueError(f"probe: lookback k={k} must satisfy 0 <= k < seq_len={self.seq_len}")


@dataclass
class SpectrumSummary:
    """Pooled singular values of one chained Jacobian measurement."""

    cell: str
    step: int
    k: int
    values: np.ndarray                 # pooled, descending
    percentiles: tuple[float, ...] = field(default=())  # at PERCENTILE_LEVELS

    def __post_init__(self):
        if not self.percentiles:
            asc = np.sort(np.asarray(self.values))
            self.percentiles = tuple(percentiles(asc, PERCENTILE_LEVELS))


@dataclass
class ProbeReport:
    """One probe tick: summaries per k plus raw per-sequence values."""

    step: int
    cell: str
    summaries: list[SpectrumSummary]
    raw: list[tuple[int, int, np.ndarray]]  # (k, seq_id, values descending)


def percentiles(values: np.ndarray, levels) -> list[float]:
    """Nearest-rank percentiles of an ascending-sorted value list.

    Level 0 is the minimum, level 1 the maximum; level p in between picks
    element ceil(p*n) (1-based) of the sorted list.
    """
    values = np.asarray(values)
    n = values.size
    if n == 0:
        raise ValueError("percentiles: empty input")
    out = []
    for p in levels:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"percentiles: level {p} outside [0, 1]")
        rank = max(1, int(np.ceil(p * n)))
        out.append(float(values[rank - 1]))
    return out


def chain_jacobian(kind: str, params, trace: RolloutTrace, t: int, k: int) -> np.ndarray:
    """d h_t / d x_{t-k}: ordered product of state Jacobians for steps
    t-k+1 .. t (latest applied last) times the input factors at step t-k.

    k = 0 means the empty product: just the input Jacobian at step t.
    """
    if not 0 <= k < t:
        raise ValueError(f"chain_jacobian: need 0 <= k < t, got k={k}, t={t}")
    if t > len(trace):
        raise ValueError(f"chain_jacobian: trace has {len(trace)} steps, asked for t={t}")
    dh_dz, dz_dx = input_jacobians(kind, params, trace, t - k)
    j = dh_dz @ dz_dx
    for i in range(t - k + 1, t + 1):
        j = state_jacobian(kind, params, trace, i) @ j
    return j


def spectrum(kind: str, params, config: ProbeConfig, rng: Rng, step: int = 0) -> ProbeReport:
    """Measure singular-value spectra of chained Jacobians at the current
    parameters: one rollout per probe sequence on freshly drawn inputs, one
    SVD per (sequence, k), pooled into a SpectrumSummary per k."""
    cells._check_kind(kind)
    d_x = params.d_x
    per_k: dict[int, list[np.ndarray]] = {k: [] for k in config.lookbacks}
    raw: list[tuple[int, int, np.ndarray]] = []
    for seq_id in range(config.n_seqs):
        xs = rng.normal(config.seq_len, d_x, scale=config.input_scale)
        trace = rollout(kind, params, np.zeros(params.d_h), xs)
        for k in config.lookbacks:
            j = chain_jacobian(kind, params, trace, config.seq_len, k)
            if not np.all(np.isfinite(j)):
                raise FloatingPointError(
                    f"non-finite chained Jacobian (cell={kind}, step={step}, k={k}, seq={seq_id})"
                )
            sv = svd_values(j)
            per_k[k].append(sv)
            raw.append((k, seq_id, sv))
    summaries = []
    for k in config.lookbacks:
        pooled = np.sort(np.concatenate(per_k[k]))[::-1]
        summaries.append(SpectrumSummary(cell=kind, step=step, k=k, values=pooled))
    return ProbeReport(step=step, cell=kind, summaries=summaries, raw=raw)


def histogram(values: np.ndarray, n_bins: int = 50):
    """Uniform-bin histogram over [0, max]; returns (edges, counts).

    Raw values are always exported too, so consumers can re-bin at will.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("histogram: empty input")
    top = float(values.max())
    if top <= 0.0:
        top = 1.0
    edges = np.linspace(0.0, top, n_bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts
