"""First-order optimizers over flat name->array parameter dicts.

Gradients and parameters travel as ``{"cell.W_h": array, ...}`` dicts (the
shape produced by :func:`rnnlab.grad.bptt`).  Updates are functional: each
step returns a new dict, leaving inputs untouched, so training state can be
snapshotted cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grad import clip_global_norm

OPTIMIZER_KINDS = ("sgd", "adam")


@dataclass
class OptimizerSpec:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0          # sgd only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0  # None disables gradient clipping
    batch_size: int = 32
    total_steps: int = 20000

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}, expected one of {OPTIMIZER_KINDS}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0 or None")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size >= 1 and total_steps >= 0 required")


@dataclass
class OptimizerState:
    """Slot variables keyed like the parameter dict; ``t`` counts adam steps."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def init_state(params: dict) -> OptimizerState:
    zeros = {k: np.zeros_like(a) for k, a in params.items()}
    return OptimizerState(
        m={k: z.copy() for k, z in zeros.items()},
        v={k: z.copy() for k, z in zeros.items()},
        t=0,
    )


def apply_update(
    spec: OptimizerSpec, params: dict, grads: dict, state: OptimizerState
) -> dict:
    """One optimizer step; mutates ``state`` slots, returns new params."""
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise KeyError(f"param/grad key mismatch: {sorted(missing)}")
    if spec.clip_norm is not None:
        grads = clip_global_norm(grads, spec.clip_norm)
    if spec.kind == "sgd":
        return _sgd(spec, params, grads, state)
    return _adam(spec, params, grads, state)


def _sgd(spec, params, grads, state):
    out = {}
    for k, p in params.items():
        g = grads[k]
        if spec.momentum > 0.0:
            state.m[k] = spec.momentum * state.m[k] + g
            g = state.m[k]
        out[k] = p - spec.lr * g
    return out


def _adam(spec, params, grads, state):
    state.t += 1
    b1, b2 = spec.beta1, spec.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out[k] = p - spec.lr * m_hat / (np.sqrt(v_hat) + spec.eps)
    return out
