"""Backpropagation through time, task losses, and the finite-difference oracle.

The forward/backward pair here is the training path: it runs whole batches
(time-major arrays of shape (T, B, d)) and hoists every input-side projection
out of the sequential loop, so only the square recurrent products remain per
step.  Gradients are exact reverse-mode derivatives of the scalar loss; the
test suite checks every parameter against central finite differences and the
MinimalRNN input gradients against the chained analytic Jacobians, so the two
derivations guard each other.

Gradient containers are flat dicts keyed ``cell.<tensor>``, ``head.<tensor>``,
``emb.<table>`` so clipping and the optimizers stay architecture-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .numerics import Rng, gaussian, sigmoid


@dataclass
class LossSpec:
    """Loss layer choice: softmax cross-entropy over a vocabulary or MSE.

    ``vocab`` is required for cross-entropy (>= 2); ``n_out`` is the output
    dimension of the regression head.
    """

    kind: str = "softmax_ce"  # or "mse"
    vocab: int | None = None
    n_out: int = 1

    def __post_init__(self):
        if self.kind not in ("softmax_ce", "mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "softmax_ce":
            if self.vocab is None or self.vocab < 2:
                raise ValueError("softmax_ce needs vocab >= 2")

    @property
    def out_dim(self) -> int:
        return self.vocab if self.kind == "softmax_ce" else self.n_out


@dataclass
class Head:
    """Linear readout h -> W_out h + b_out."""

    W_out: np.ndarray  # (n_out, d_h)
    b_out: np.ndarray  # (n_out,)


@dataclass
class EmbeddingTables:
    """Learned input embeddings; ``ctx`` is optional context (e.g. page id)."""

    item: np.ndarray            # (V_item, d_item)
    ctx: np.ndarray | None = None  # (V_ctx, d_ctx)

    @property
    def d_x(self) -> int:
        d = self.item.shape[1]
        if self.ctx is not None:
            d += self.ctx.shape[1]
        return d


def init_head(n_out: int, d_h: int, rng: Rng) -> Head:
    return Head(W_out=gaussian(n_out, d_h, 1.0 / np.sqrt(d_h), rng), b_out=np.zeros(n_out))


def forward_batch(kind: str, params, x: np.ndarray, h0: np.ndarray | None = None):
    """Batched rollout; returns (hs, cache) with hs shaped (T+1, B, d_h).

    hs[0] is the initial state; cache holds the stacked activations the
    backward pass needs.
    """
    cells._check_kind(kind)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"forward_batch: expected inputs (T, B, d_x), got {x.shape}")
    T, B, d_x = x.shape
    if d_x != params.d_x:
        raise ValueError(f"forward_batch: input dim {d_x} != cell d_x {params.d_x}")
    d_h = params.d_h
    h = np.zeros((B, d_h)) if h0 is None else np.asarray(h0, dtype=np.float64) + np.zeros((B, d_h))
    hs = np.empty((T + 1, B, d_h))
    hs[0] = h
    flat = x.reshape(T * B, d_x)
    cache: dict[str, np.ndarray] = {}

    if kind == "vanilla":
        xb = (flat @ params.W_x.T + params.b).reshape(T, B, d_h)
        for t in range(T):
            h = np.tanh(xb[t] + h @ params.W_h.T)
            hs[t + 1] = h
    elif kind == "gru":
        xr = (flat @ params.W_xr.T + params.b_r).reshape(T, B, d_h)
        xu = (flat @ params.W_xu.T + params.b_u).reshape(T, B, d_h)
        xc = (flat @ params.W_xc.T + params.b_h).reshape(T, B, d_h)
        r_s = np.empty((T, B, d_h)); u_s = np.empty((T, B, d_h))
        c_s = np.empty((T, B, d_h)); rh_s = np.empty((T, B, d_h))
        for t in range(T):
            r = sigmoid(xr[t] + h @ params.R_h.T)
            u = sigmoid(xu[t] + h @ params.U_h.T)
            rh = r * h
            c = np.tanh(xc[t] + rh @ params.W_h.T)
            h = u * h + (1.0 - u) * c
            r_s[t], u_s[t], c_s[t], rh_s[t], hs[t + 1] = r, u, c, rh, h
        cache.update(r=r_s, u=u_s, c=c_s, rh=rh_s)
    elif kind == "cfn":
        xu = (flat @ params.V_u.T + params.b_u).reshape(T, B, d_h)
        xi = (flat @ params.V_i.T + params.b_i).reshape(T, B, d_h)
        w = np.tanh(flat @ params.W_x.T + params.b_x).reshape(T, B, d_h)
        u_s = np.empty((T, B, d_h)); i_s = np.empty((T, B, d_h)); th_s = np.empty((T, B, d_h))
        for t in range(T):
            u = sigmoid(xu[t] + h @ params.U_u.T)
            gi = sigmoid(xi[t] + h @ params.U_i.T)
            th = np.tanh(h)
            h = u * th + gi * w[t]
            u_s[t], i_s[t], th_s[t], hs[t + 1] = u, gi, th, h
        cache.update(u=u_s, gate_i=i_s, tanh_h=th_s, w=w)
    else:  # minimal
        z = np.tanh(flat @ params.W_x.T + params.b_z).reshape(T, B, d_h)
        uz = (z.reshape(T * B, d_h) @ params.U_z.T + params.b_u).reshape(T, B, d_h)
        u_s = np.empty((T, B, d_h))
        for t in range(T):
            u = sigmoid(uz[t] + h @ params.U_h.T)
            h = u * h + (1.0 - u) * z[t]
            u_s[t], hs[t + 1] = u, h
        cache.update(z=z, u=u_s)

    if not np.all(np.isfinite(hs[-1])):
        finite = np.isfinite(hs).all(axis=2)  # (T+1, B)
        bad_t, bad_b = np.argwhere(~finite)[0]
        raise cells.NonFiniteStateError(
            f"{kind} forward produced non-finite state at step {int(bad_t)}, batch element {int(bad_b)}"
        )
    return hs, cache


def _stacked_outer(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_t,b outer(g[t,b], v[t,b]) as one GEMM."""
    T, B, di = g.shape
    return g.reshape(T * B, di).T @ v.reshape(T * B, -1)


def backward_batch(kind: str, params, x: np.ndarray, hs: np.ndarray, cache, g_hs: np.ndarray):
    """Reverse-accumulate through the batched rollout.

    g_hs (T, B, d_h) holds the loss gradient injected at each step's output
    state.  Returns (cell gradient dict keyed by tensor name, g_x (T, B, d_x)).
    """
    T, B, d_x = x.shape
    d_h = params.d_h
    flat_x = x.reshape(T * B, d_x)
    h_prev = hs[:-1]  # (T, B, d_h)
    g = np.zeros((B, d_h))
    grads: dict[str, np.ndarray] = {}

    if kind == "vanilla":
        ga_s = np.empty((T, B, d_h))
        for t in range(T - 1, -1, -1):
            g = g + g_hs[t]
            ga = (1.0 - hs[t + 1] ** 2) * g
            ga_s[t] = ga
            g = ga @ params.W_h
        grads["W_h"] = _stacked_outer(ga_s, h_prev)
        grads["W_x"] = _stacked_outer(ga_s, x)
        grads["b"] = ga_s.sum(axis=(0, 1))
        g_x = (ga_s.reshape(T * B, d_h) @ params.W_x).reshape(T, B, d_x)
        return grads, g_x

    if kind == "gru":
        r, u, c, rh = cache["r"], cache["u"], cache["c"], cache["rh"]
        gpu_s = np.empty((T, B, d_h)); gpc_s = np.empty((T, B, d_h)); gpr_s = np.empty((T, B, d_h))
        for t in range(T - 1, -1, -1):
            g = g + g_hs[t]
            hp = h_prev[t]
            gpu = (hp - c[t]) * u[t] * (1.0 - u[t]) * g
            gc = (1.0 - u[t]) * g
            gpc = (1.0 - c[t] ** 2) * gc
            grh = gpc @ params.W_h
            gpr = hp * r[t] * (1.0 - r[t]) * grh
            gpu_s[t], gpc_s[t], gpr_s[t] = gpu, gpc, gpr
            g = u[t] * g + gpu @ params.U_h + r[t] * grh + gpr @ params.R_h
        grads["U_h"] = _stacked_outer(gpu_s, h_prev)
        grads["W_xu"] = _stacked_outer(gpu_s, x)
        grads["b_u"] = gpu_s.sum(axis=(0, 1))
        grads["W_h"] = _stacked_outer(gpc_s, rh)
        grads["W_xc"] = _stacked_outer(gpc_s, x)
        grads["b_h"] = gpc_s.sum(axis=(0, 1))
        grads["R_h"] = _stacked_outer(gpr_s, h_prev)
        grads["W_xr"] = _stacked_outer(gpr_s, x)
        grads["b_r"] = gpr_s.sum(axis=(0, 1))
        g_x = (
            gpu_s.reshape(T * B, d_h) @ params.W_xu
            + gpc_s.reshape(T * B, d_h) @ params.W_xc
            + gpr_s.reshape(T * B, d_h) @ params.W_xr
        ).reshape(T, B, d_x)
        return grads, g_x

    if kind == "cfn":
        u, gi, th, w = cache["u"], cache["gate_i"], cache["tanh_h"], cache["w"]
        gpu_s = np.empty((T, B, d_h)); gpi_s = np.empty((T, B, d_h)); gpw_s = np.empty((T, B, d_h))
        for t in range(T - 1, -1, -1):
            g = g + g_hs[t]
            gpu = th[t] * u[t] * (1.0 - u[t]) * g
            gpi = w[t] * gi[t] * (1.0 - gi[t]) * g
            gpw = gi[t] * (1.0 - w[t] ** 2) * g
            gpu_s[t], gpi_s[t], gpw_s[t] = gpu, gpi, gpw
            g = u[t] * (1.0 - th[t] ** 2) * g + gpu @ params.U_u + gpi @ params.U_i
        grads["U_u"] = _stacked_outer(gpu_s, h_prev)
        grads["V_u"] = _stacked_outer(gpu_s, x)
        grads["b_u"] = gpu_s.sum(axis=(0, 1))
        grads["U_i"] = _stacked_outer(gpi_s, h_prev)
        grads["V_i"] = _stacked_outer(gpi_s, x)
        grads["b_i"] = gpi_s.sum(axis=(0, 1))
        grads["W_x"] = _stacked_outer(gpw_s, x)
        grads["b_x"] = gpw_s.sum(axis=(0, 1))
        g_x = (
            gpu_s.reshape(T * B, d_h) @ params.V_u
            + gpi_s.reshape(T * B, d_h) @ params.V_i
            + gpw_s.reshape(T * B, d_h) @ params.W_x
        ).reshape(T, B, d_x)
        return grads, g_x

    # minimal
    z, u = cache["z"], cache["u"]
    gpu_s = np.empty((T, B, d_h)); gz_s = np.empty((T, B, d_h))
    for t in range(T - 1, -1, -1):
        g = g + g_hs[t]
        gpu = (h_prev[t] - z[t]) * u[t] * (1.0 - u[t]) * g
        gpu_s[t] = gpu
        gz_s[t] = (1.0 - u[t]) * g
        g = u[t] * g + gpu @ params.U_h
    gz_s += gpu_s.reshape(T * B, d_h).dot(params.U_z).reshape(T, B, d_h)
    gpz_s = (1.0 - z ** 2) * gz_s
    grads["U_h"] = _stacked_outer(gpu_s, h_prev)
    grads["U_z"] = _stacked_outer(gpu_s, z)
    grads["b_u"] = gpu_s.sum(axis=(0, 1))
    grads["W_x"] = _stacked_outer(gpz_s, x)
    grads["b_z"] = gpz_s.sum(axis=(0, 1))
    g_x = (gpz_s.reshape(T * B, d_h) @ params.W_x).reshape(T, B, d_x)
    return grads, g_x


def softmax_ce_loss(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over rows where target >= 0; returns (loss, dlogits).

    Rows with negative targets are masked out.  An empty mask yields loss 0
    and zero gradients.
    """
    n, V = logits.shape
    mask = targets >= 0
    n_pred = int(mask.sum())
    if n_pred == 0:
        return 0.0, np.zeros_like(logits)
    m = logits.max(axis=1, keepdims=True)
    tgt = np.where(mask, targets, 0)
    # picked must be read before the shifted array reuses the buffer
    picked = logits[np.arange(n), tgt] - m[:, 0]
    ex = logits - m
    np.exp(ex, out=ex)
    sum_ex = ex.sum(axis=1, keepdims=True)
    # loss_i = log(sum exp) - logit[target]  (after the max shift)
    losses = np.log(sum_ex[:, 0]) - picked
    loss = float(losses[mask].sum() / n_pred)
    # fold the 1/n_pred averaging into the normalizer to save a full pass
    dlogits = ex
    dlogits /= sum_ex * n_pred
    dlogits[np.arange(n), tgt] -= 1.0 / n_pred
    if n_pred < n:
        dlogits[~mask] = 0.0
    return loss, dlogits


def mse_loss(preds: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Mean squared error over masked rows, averaged over output dims too."""
    n, d = preds.shape
    n_pred = int(mask.sum())
    if n_pred == 0:
        return 0.0, np.zeros_like(preds)
    diff = (preds - targets) * mask[:, None]
    loss = float((diff ** 2).sum() / (n_pred * d))
    return loss, 2.0 * diff / (n_pred * d)


def bptt(kind: str, params, head: Head, x: np.ndarray, targets: np.ndarray,
         loss: LossSpec, h0: np.ndarray | None = None, target_mask: np.ndarray | None = None):
    """Loss and exact gradients for a batch of equal-length sequences.

    x: (T, B, d_x) real inputs; targets: (T, B) int for cross-entropy (< 0
    masks a step out) or (T, B, n_out) float for MSE with ``target_mask``
    (T, B) marking predicted steps.  The loss is averaged over batch and
    predicted steps.  Returns (loss, grads, g_x) with grads keyed
    ``cell.<name>`` / ``head.<name>``.
    """
    x = np.asarray(x, dtype=np.float64)
    T, B, _ = x.shape
    hs, cache = forward_batch(kind, params, x, h0)
    H = hs[1:].reshape(T * B, params.d_h)
    out = H @ head.W_out.T + head.b_out

    if loss.kind == "softmax_ce":
        tflat = np.asarray(targets).reshape(T * B)
        value, dout = softmax_ce_loss(out, tflat)
    else:
        tflat = np.asarray(targets, dtype=np.float64).reshape(T * B, -1)
        mflat = (np.ones((T, B), dtype=bool) if target_mask is None
                 else np.asarray(target_mask, dtype=bool)).reshape(T * B)
        value, dout = mse_loss(out, tflat, mflat)

    grads = {
        "head.W_out": dout.T @ H,
        "head.b_out": dout.sum(axis=0),
    }
    g_hs = (dout @ head.W_out).reshape(T, B, params.d_h)
    cell_grads, g_x = backward_batch(kind, params, x, hs, cache, g_hs)
    for name, gr in cell_grads.items():
        grads[f"cell.{name}"] = gr
    if not np.isfinite(value):
        bad = np.argwhere(~np.isfinite(out).all(axis=1))
        t, b = divmod(int(bad[0, 0]), B) if len(bad) else (T - 1, 0)
        raise FloatingPointError(
            f"non-finite loss in {kind} bptt (first bad output at step {t}, batch element {b})"
        )
    return value, grads, g_x


def bptt_embedded(kind: str, params, head: Head, emb: EmbeddingTables,
                  items: np.ndarray, ctx: np.ndarray | None, targets: np.ndarray,
                  loss: LossSpec):
    """BPTT over token inputs: embeds, runs :func:`bptt`, scatters g_x back
    into gradients for the embedding tables.  Shapes: items/ctx (T, B) int."""
    items = np.asarray(items)
    T, B = items.shape
    d_item = emb.item.shape[1]
    parts = [emb.item[items]]
    if emb.ctx is not None:
        if ctx is None:
            raise ValueError("context table present but no context tokens given")
        parts.append(emb.ctx[ctx])
    x = np.concatenate(parts, axis=2)
    value, grads, g_x = bptt(kind, params, head, x, targets, loss)

    flat_items = items.reshape(T * B)
    g_item = g_x[:, :, :d_item].reshape(T * B, d_item)
    grads["emb.item"] = _segment_sum(flat_items, g_item, emb.item.shape[0])
    if emb.ctx is not None:
        flat_ctx = np.asarray(ctx).reshape(T * B)
        g_ctx = g_x[:, :, d_item:].reshape(T * B, emb.ctx.shape[1])
        grads["emb.ctx"] = _segment_sum(flat_ctx, g_ctx, emb.ctx.shape[0])
    return value, grads


def _segment_sum(idx: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Scatter-add rows of ``values`` into ``n_rows`` buckets (bincount per column)."""
    out = np.empty((n_rows, values.shape[1]))
    for d in range(values.shape[1]):
        out[:, d] = np.bincount(idx, weights=values[:, d], minlength=n_rows)
    return out


def fd_jacobian(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector-to-vector function.

    Column j is (f(x + step e_j) - f(x - step e_j)) / (2 step).
    """
    if step <= 0:
        raise ValueError(f"fd_jacobian: step must be > 0, got {step}")
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = step
        hi = np.asarray(f(x + e), dtype=np.float64)
        lo = np.asarray(f(x - e), dtype=np.float64)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise FloatingPointError(f"fd_jacobian: non-finite function output at column {j}")
        cols.append((hi - lo) / (2.0 * step))
    return np.stack(cols, axis=1)


def fd_gradients(f_scalar, params: dict[str, np.ndarray], step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of a scalar function of named tensors.

    The per-entry step is scaled by (1 + |theta|) to balance truncation and
    roundoff across parameter magnitudes.  ``f_scalar`` is called with the
    (temporarily perturbed) dict; tensors are restored afterwards.
    """
    grads = {}
    for name, t in params.items():
        g = np.empty_like(t)
        flat = t.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            eps = step * (1.0 + abs(orig))
            flat[j] = orig + eps
            hi = f_scalar(params)
            flat[j] = orig - eps
            lo = f_scalar(params)
            flat[j] = orig
            g.reshape(-1)[j] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def global_norm(grads: dict[str, np.ndarray]) -> float:
    """L2 norm over all gradient tensors jointly."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g) ** 2))
    return float(np.sqrt(total))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/g when the global norm g exceeds it."""
    if max_norm <= 0:
        raise ValueError(f"clip_global_norm: max_norm must be > 0, got {max_norm}")
    g = global_norm(grads)
    if g <= max_norm:
        return grads
    scale = max_norm / g
    return {name: t * scale for name, t in grads.items()}


def input_gradients_via_chain(kind: str, params, trace, g_final: np.ndarray) -> list[np.ndarray]:
    """dL/dx_t for every t from the chained analytic Jacobians, given the
    loss gradient at the final state.  Independent route from reverse
    accumulation; the two must agree (tested to 1e-10).
    """
    from .probe import chain_jacobian  # local import to avoid a cycle

    T = len(trace)
    return [chain_jacobian(kind, params, trace, T, T - t).T @ g_final for t in range(1, T + 1)]
