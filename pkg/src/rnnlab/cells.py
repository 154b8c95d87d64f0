"""The four recurrent cell architectures and their exact per-step Jacobians.

Cells are identified by the strings in :data:`CELL_KINDS`:

* ``vanilla``  h_t = tanh(W_h h_{t-1} + W_x x_t + b)
* ``gru``      h_t = u_t*h_{t-1} + (1-u_t)*c_t with reset/update gates and
               candidate c_t = tanh(W_h (r_t*h_{t-1}) + W_xc x_t + b_h)
* ``cfn``      h_t = u_t*tanh(h_{t-1}) + i_t*tanh(W_x x_t + b_x); the state
               path never mixes dimensions
* ``minimal``  h_t = u_t*h_{t-1} + (1-u_t)*z_t, a single update gate convexly
               combining the previous state with the encoded input
               z_t = tanh(W_x x_t + b_z)

Every architecture exposes the same surfaces: parameter init (square
recurrent matrices orthogonal, input matrices Gaussian at scale 1/sqrt(d_x),
biases zero), a forward ``step`` that records all intermediate activations,
``rollout`` over a sequence, and closed-form Jacobians ``state_jacobian``
(d h_i / d h_{i-1}) and ``input_jacobians`` (the input-side factors).  The
analytic forms are validated against central finite differences in the test
suite; do not edit one side without re-running the other.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .numerics import Rng, dsigmoid, dtanh, gaussian, random_orthogonal, sigmoid

CELL_KINDS = ("vanilla", "gru", "cfn", "minimal")

FORMAT_VERSION = 1


class NonFiniteStateError(ArithmeticError):
    """A forward step produced NaN/Inf (parameter or activation blow-up)."""


def _check_kind(kind: str) -> None:
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}, expected one of {CELL_KINDS}")


@dataclass
class VanillaParams:
    """h_t = tanh(W_h h_{t-1} + W_x x_t + b)."""

    W_h: np.ndarray  # (d_h, d_h)
    W_x: np.ndarray  # (d_h, d_x)
    b: np.ndarray    # (d_h,)

    @property
    def d_h(self) -> int:
        return self.W_h.shape[0]

    @property
    def d_x(self) -> int:
        return self.W_x.shape[1]


@dataclass
class GruParams:
    """Gated recurrent unit.

    u_t = sigmoid(W_xu x_t + U_h h_{t-1} + b_u)      update gate
    r_t = sigmoid(W_xr x_t + R_h h_{t-1} + b_r)      reset gate
    c_t = tanh(W_h (r_t * h_{t-1}) + W_xc x_t + b_h) candidate
    h_t = u_t * h_{t-1} + (1 - u_t) * c_t
    """

    W_h: np.ndarray   # (d_h, d_h) candidate recurrence
    W_xc: np.ndarray  # (d_h, d_x) candidate input
    b_h: np.ndarray
    U_h: np.ndarray   # (d_h, d_h) update-gate recurrence
    W_xu: np.ndarray  # (d_h, d_x)
    b_u: np.ndarray
    R_h: np.ndarray   # (d_h, d_h) reset-gate recurrence
    W_xr: np.ndarray  # (d_h, d_x)
    b_r: np.ndarray

    @property
    def d_h(self) -> int:
        return self.W_h.shape[0]

    @property
    def d_x(self) -> int:
        return self.W_xc.shape[1]


@dataclass
class CfnParams:
    """Chaos-free cell: two gates, no mixing on the state path.

    u_t = sigmoid(U_u h_{t-1} + V_u x_t + b_u)   update gate
    i_t = sigmoid(U_i h_{t-1} + V_i x_t + b_i)   input gate
    h_t = u_t * tanh(h_{t-1}) + i_t * tanh(W_x x_t + b_x)
    """

    U_u: np.ndarray  # (d_h, d_h)
    V_u: np.ndarray  # (d_h, d_x)
    b_u: np.ndarray
    U_i: np.ndarray  # (d_h, d_h)
    V_i: np.ndarray  # (d_h, d_x)
    b_i: np.ndarray
    W_x: np.ndarray  # (d_h, d_x) input branch
    b_x: np.ndarray  # distinct from the gate biases

    @property
    def d_h(self) -> int:
        return self.U_u.shape[0]

    @property
    def d_x(self) -> int:
        return self.W_x.shape[1]


@dataclass
class MinimalRnnParams:
    """Single-gate cell over an encoded input.

    z_t = tanh(W_x x_t + b_z)                        encoder
    u_t = sigmoid(U_h h_{t-1} + U_z z_t + b_u)       update gate
    h_t = u_t * h_{t-1} + (1 - u_t) * z_t
    """

    W_x: np.ndarray  # (d_h, d_x) encoder weights
    b_z: np.ndarray  # (d_h,) encoder bias
    U_h: np.ndarray  # (d_h, d_h) gate recurrence
    U_z: np.ndarray  # (d_h, d_h) gate input weights
    b_u: np.ndarray  # (d_h,) gate bias

    @property
    def d_h(self) -> int:
        return self.U_h.shape[0]

    @property
    def d_x(self) -> int:
        return self.W_x.shape[1]


CellParams = VanillaParams | GruParams | CfnParams | MinimalRnnParams

_PARAM_CLASSES = {
    "vanilla": VanillaParams,
    "gru": GruParams,
    "cfn": CfnParams,
    "minimal": MinimalRnnParams,
}


def tensors(params: CellParams) -> dict[str, np.ndarray]:
    """Named tensors of a parameter set, in declaration order."""
    return {f.name: getattr(params, f.name) for f in fields(params)}


@dataclass
class StepTrace:
    """Everything one forward step computed, for Jacobians and BPTT.

    Unused fields stay None for architectures that do not produce them.
    ``preact`` maps activation names to their pre-nonlinearity values.
    """

    x: np.ndarray
    h_prev: np.ndarray
    h: np.ndarray
    u: np.ndarray | None = None       # update gate (gru/cfn/minimal)
    r: np.ndarray | None = None       # reset gate (gru)
    gate_i: np.ndarray | None = None  # input gate (cfn)
    z: np.ndarray | None = None       # encoded input (minimal)
    cand: np.ndarray | None = None    # candidate state (gru)
    inp: np.ndarray | None = None     # tanh input branch (cfn)
    preact: dict[str, np.ndarray] | None = None


@dataclass
class RolloutTrace:
    """Per-step traces of one forward pass; steps[i] computed h_{i+1}."""

    kind: str
    h0: np.ndarray
    steps: list[StepTrace]

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, i: int) -> StepTrace:
        """Trace of step i, 1-based: the step that produced h_i from h_{i-1}."""
        if not 1 <= i <= len(self.steps):
            raise IndexError(f"step index {i} outside 1..{len(self.steps)}")
        return self.steps[i - 1]

    @property
    def h_final(self) -> np.ndarray:
        return self.steps[-1].h if self.steps else self.h0


def init_params(kind: str, d_x: int, d_h: int, rng: Rng) -> CellParams:
    """Initialize with orthogonal square recurrences, Gaussian inputs at
    scale 1/sqrt(d_x), and zero biases.  Draw order is fixed per kind."""
    _check_kind(kind)
    if d_x < 1 or d_h < 1:
        raise ValueError(f"init_params: dimensions must be >= 1, got d_x={d_x}, d_h={d_h}")
    sx = 1.0 / np.sqrt(d_x)
    zeros = lambda: np.zeros(d_h)
    if kind == "vanilla":
        return VanillaParams(
            W_h=random_orthogonal(d_h, rng),
            W_x=gaussian(d_h, d_x, sx, rng),
            b=zeros(),
        )
    if kind == "gru":
        return GruParams(
            W_h=random_orthogonal(d_h, rng),
            W_xc=gaussian(d_h, d_x, sx, rng),
            b_h=zeros(),
            U_h=random_orthogonal(d_h, rng),
            W_xu=gaussian(d_h, d_x, sx, rng),
            b_u=zeros(),
            R_h=random_orthogonal(d_h, rng),
            W_xr=gaussian(d_h, d_x, sx, rng),
            b_r=zeros(),
        )
    if kind == "cfn":
        return CfnParams(
            U_u=random_orthogonal(d_h, rng),
            V_u=gaussian(d_h, d_x, sx, rng),
            b_u=zeros(),
            U_i=random_orthogonal(d_h, rng),
            V_i=gaussian(d_h, d_x, sx, rng),
            b_i=zeros(),
            W_x=gaussian(d_h, d_x, sx, rng),
            b_x=zeros(),
        )
    return MinimalRnnParams(
        W_x=gaussian(d_h, d_x, sx, rng),
        b_z=zeros(),
        U_h=random_orthogonal(d_h, rng),
        U_z=random_orthogonal(d_h, rng),
        b_u=zeros(),
    )


def encode(params: MinimalRnnParams, x: np.ndarray) -> np.ndarray:
    """Minimal-cell encoder z = tanh(W_x x + b_z); entries in (-1, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d_x,):
        raise ValueError(f"encode: expected input of shape ({params.d_x},), got {x.shape}")
    return np.tanh(params.W_x @ x + params.b_z)


def _step_vanilla(p: VanillaParams, h_prev, x):
    a = p.W_h @ h_prev + p.W_x @ x + p.b
    h = np.tanh(a)
    return h, StepTrace(x=x, h_prev=h_prev, h=h, preact={"h": a})


def _step_gru(p: GruParams, h_prev, x):
    pre_r = p.W_xr @ x + p.R_h @ h_prev + p.b_r
    pre_u = p.W_xu @ x + p.U_h @ h_prev + p.b_u
    r = sigmoid(pre_r)
    u = sigmoid(pre_u)
    pre_c = p.W_h @ (r * h_prev) + p.W_xc @ x + p.b_h
    c = np.tanh(pre_c)
    h = u * h_prev + (1.0 - u) * c
    return h, StepTrace(
        x=x, h_prev=h_prev, h=h, u=u, r=r, cand=c,
        preact={"r": pre_r, "u": pre_u, "cand": pre_c},
    )


def _step_cfn(p: CfnParams, h_prev, x):
    pre_u = p.U_u @ h_prev + p.V_u @ x + p.b_u
    pre_i = p.U_i @ h_prev + p.V_i @ x + p.b_i
    pre_w = p.W_x @ x + p.b_x
    u = sigmoid(pre_u)
    gi = sigmoid(pre_i)
    w = np.tanh(pre_w)
    h = u * np.tanh(h_prev) + gi * w
    return h, StepTrace(
        x=x, h_prev=h_prev, h=h, u=u, gate_i=gi, inp=w,
        preact={"u": pre_u, "i": pre_i, "inp": pre_w},
    )


def _step_minimal(p: MinimalRnnParams, h_prev, x):
    pre_z = p.W_x @ x + p.b_z
    z = np.tanh(pre_z)
    pre_u = p.U_h @ h_prev + p.U_z @ z + p.b_u
    u = sigmoid(pre_u)
    h = u * h_prev + (1.0 - u) * z
    return h, StepTrace(
        x=x, h_prev=h_prev, h=h, u=u, z=z,
        preact={"z": pre_z, "u": pre_u},
    )


_STEP_FNS = {
    "vanilla": _step_vanilla,
    "gru": _step_gru,
    "cfn": _step_cfn,
    "minimal": _step_minimal,
}


def step(kind: str, params: CellParams, h_prev: np.ndarray, x: np.ndarray):
    """One forward step; returns (h_t, trace entry with all activations)."""
    _check_kind(kind)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h_prev.shape != (params.d_h,):
        raise ValueError(f"step: expected state of shape ({params.d_h},), got {h_prev.shape}")
    if x.shape != (params.d_x,):
        raise ValueError(f"step: expected input of shape ({params.d_x},), got {x.shape}")
    h, trace = _STEP_FNS[kind](params, h_prev, x)
    if not np.all(np.isfinite(h)):
        raise NonFiniteStateError(f"{kind} step produced non-finite state")
    return h, trace


def rollout(kind: str, params: CellParams, h0: np.ndarray, xs: np.ndarray) -> RolloutTrace:
    """Iterate ``step`` over xs (T, d_x); errors carry the failing time index."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ValueError(f"rollout: expected inputs of shape (T>=1, d_x), got {xs.shape}")
    h = np.asarray(h0, dtype=np.float64)
    steps = []
    for t in range(xs.shape[0]):
        try:
            h, tr = step(kind, params, h, xs[t])
        except NonFiniteStateError as e:
            raise NonFiniteStateError(f"{e} at time step {t + 1}") from e
        steps.append(tr)
    return RolloutTrace(kind=kind, h0=np.asarray(h0, dtype=np.float64), steps=steps)


def _diag_times(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    """diag(v) @ m without materializing the diagonal matrix."""
    return v[:, None] * m


def state_jacobian(kind: str, params: CellParams, trace: RolloutTrace, i: int) -> np.ndarray:
    """Exact d h_i / d h_{i-1} at the activations recorded for step i.

    vanilla:  diag(1-h_i^2) W_h
    gru:      diag(u) + diag((h_{i-1}-c) u (1-u)) U_h
              + diag((1-u)(1-c^2)) W_h (diag(r) + diag(h_{i-1} r (1-r)) R_h)
    cfn:      diag(u (1-tanh^2 h_{i-1})) + diag(tanh(h_{i-1}) u (1-u)) U_u
              + diag(w i (1-i)) U_i
    minimal:  diag(u) + diag((h_{i-1}-z) u (1-u)) U_h
    """
    _check_kind(kind)
    tr = trace.step(i)
    if kind == "vanilla":
        return _diag_times(dtanh(tr.h), params.W_h)
    if kind == "gru":
        u, r, c, hp = tr.u, tr.r, tr.cand, tr.h_prev
        inner = np.diag(r) + _diag_times(hp * dsigmoid(r), params.R_h)
        return (
            np.diag(u)
            + _diag_times((hp - c) * dsigmoid(u), params.U_h)
            + _diag_times((1.0 - u) * dtanh(c), params.W_h @ inner)
        )
    if kind == "cfn":
        u, gi, w, hp = tr.u, tr.gate_i, tr.inp, tr.h_prev
        th = np.tanh(hp)
        return (
            np.diag(u * dtanh(th))
            + _diag_times(th * dsigmoid(u), params.U_u)
            + _diag_times(w * dsigmoid(gi), params.U_i)
        )
    u, z, hp = tr.u, tr.z, tr.h_prev
    return np.diag(u) + _diag_times((hp - z) * dsigmoid(u), params.U_h)


def input_jacobians(kind: str, params: CellParams, trace: RolloutTrace, t: int):
    """Input-side Jacobian factors (dh_dz, dz_dx) at step t.

    For the minimal cell the factors split along the encoder:
    dh_dz = diag(1-u) + diag((h_{t-1}-z) u (1-u)) U_z  and
    dz_dx = diag(1-z^2) W_x, so dh_dz @ dz_dx = d h_t / d x_t.

    The other cells have no encoder; by convention dh_dz is the full
    d h_t / d x_t (shape d_h x d_x) and dz_dx is the d_x identity, so the
    product is the same quantity for every architecture.
    """
    _check_kind(kind)
    tr = trace.step(t)
    if kind == "minimal":
        u, z, hp = tr.u, tr.z, tr.h_prev
        dh_dz = np.diag(1.0 - u) + _diag_times((hp - z) * dsigmoid(u), params.U_z)
        dz_dx = _diag_times(dtanh(z), params.W_x)
        return dh_dz, dz_dx
    eye_x = np.eye(params.d_x)
    if kind == "vanilla":
        return _diag_times(dtanh(tr.h), params.W_x), eye_x
    if kind == "gru":
        u, r, c, hp = tr.u, tr.r, tr.cand, tr.h_prev
        dc_dx = _diag_times(
            dtanh(c),
            params.W_xc + params.W_h @ _diag_times(hp * dsigmoid(r), params.W_xr),
        )
        dh_dx = _diag_times((hp - c) * dsigmoid(u), params.W_xu) + _diag_times(1.0 - u, dc_dx)
        return dh_dx, eye_x
    u, gi, w, hp = tr.u, tr.gate_i, tr.inp, tr.h_prev
    dh_dx = (
        _diag_times(np.tanh(hp) * dsigmoid(u), params.V_u)
        + _diag_times(w * dsigmoid(gi), params.V_i)
        + _diag_times(gi * dtanh(w), params.W_x)
    )
    return dh_dx, eye_x


def save_params(path: str, kind: str, params: CellParams, meta: dict | None = None,
                extras: dict | None = None) -> None:
    """Serialize to an .npz container: named float64 tensors plus
    ``cell_kind``, ``format_version`` and a JSON metadata string.
    Round-trips bit-exactly; the write is atomic (temp file + rename).

    ``extras`` adds more named arrays (readout weights, embeddings); their
    names must not collide with the cell's own tensor names, and loaders that
    only want the cell ignore them."""
    _check_kind(kind)
    payload = {name: np.ascontiguousarray(t, dtype=np.float64) for name, t in tensors(params).items()}
    for name, t in (extras or {}).items():
        if name in payload or name in ("cell_kind", "format_version", "meta_json"):
            raise ValueError(f"extra tensor name {name!r} collides with a reserved key")
        payload[name] = np.ascontiguousarray(t, dtype=np.float64)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(
                fh,
                cell_kind=np.str_(kind),
                format_version=np.int64(FORMAT_VERSION),
                meta_json=np.str_(json.dumps(meta or {}, sort_keys=True)),
                **payload,
            )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path: str):
    """Inverse of :func:`save_params`; returns (kind, params, meta)."""
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {version}")
        kind = str(data["cell_kind"])
        _check_kind(kind)
        meta = json.loads(str(data["meta_json"]))
        cls = _PARAM_CLASSES[kind]
        arrays = {}
        for f in fields(cls):
            if f.name not in data:
                raise ValueError(f"checkpoint missing tensor {f.name!r} for cell {kind!r}")
            arrays[f.name] = np.array(data[f.name], dtype=np.float64)
    return kind, cls(**arrays), meta
