"""Dense float64 kernel shared by every other module.

Matrices are 2-d C-contiguous ``numpy.float64`` arrays (row-major), vectors are
1-d arrays.  numpy/LAPACK supply the heavy operations (matmul, QR, SVD); the
random source is implemented here so that every stream is reproducible from a
64-bit seed on any platform, independent of numpy's own generators.

All functions are pure; only :class:`Rng` carries mutable state (its draw
counter).  Distinct Rng instances never share state.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # Weyl increment of the SplitMix64 sequence
_SPAWN_SALT = 0xA3EC647659359ACD

__all__ = [
    "Rng",
    "matmul",
    "sigmoid",
    "dsigmoid",
    "dtanh",
    "random_orthogonal",
    "svd_values",
    "gaussian",
]


def _mix64_int(z: int) -> int:
    """SplitMix64 finalizer on a Python int (64-bit wrapping)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array ops wrap silently, matching the masked scalar path
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based deterministic random stream (SplitMix64).

    Draw ``i`` (zero-based) of the stream for seed ``s`` is
    ``mix64(s + (i+1) * 0x9E3779B97F4A7C15)`` where ``mix64`` is the SplitMix64
    finalizer; all arithmetic wraps modulo 2**64.  Because each output depends
    only on the seed and the draw index, bulk draws vectorize over the counter
    and the stream is identical on every platform.

    Uniform doubles take the top 53 bits: ``(x >> 11) * 2**-53`` in ``[0, 1)``.
    Gaussians come from the Box-Muller transform applied to uniform pairs.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._pos = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed:#x}, pos={self._pos})"

    def next_u64(self) -> int:
        """Single draw via the scalar path (checked against the bulk path)."""
        self._pos += 1
        return _mix64_int((self.seed + self._pos * _GAMMA) & _MASK64)

    def raw(self, n: int) -> np.ndarray:
        """n raw uint64 draws, advancing the counter by n."""
        idx = np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)
        self._pos += n
        return _mix64_array(np.uint64(self.seed) + idx * np.uint64(_GAMMA))

    def uniform(self, *shape: int) -> np.ndarray:
        """i.i.d. uniform [0, 1) doubles with the given shape."""
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape) if shape else u[0]

    def normal(self, *shape: int, scale: float = 1.0) -> np.ndarray:
        """i.i.d. N(0, scale^2) doubles via Box-Muller on uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        # log1p(-u) = log(1-u) is exact near u=0 and 1-u > 0 for u in [0,1)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * math.pi) * u[1::2]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n] * scale
        return z.reshape(shape) if shape else z[0]

    def integers(self, high: int, size: int | None = None):
        """Uniform ints in [0, high) via floor(uniform * high).

        The floor construction has bias below high/2**53, negligible for the
        vocabulary-scale ranges used here.
        """
        if high <= 0:
            raise ValueError(f"integers: high must be positive, got {high}")
        n = 1 if size is None else int(size)
        v = np.floor(self.uniform(n) * high).astype(np.int64)
        return int(v[0]) if size is None else v

    def shuffled(self, n: int) -> np.ndarray:
        """A seeded permutation of range(n) (Fisher-Yates, scalar draws)."""
        perm = np.arange(n, dtype=np.int64)
        swaps = self.uniform(n)
        for i in range(n - 1, 0, -1):
            j = int(swaps[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream derived from (seed, tag).

        Child seed = mix64((seed ^ SALT) + (tag+1)*GAMMA); the salt keeps child
        seeds off the parent's own output sequence.
        """
        child = _mix64_int(((self.seed ^ _SPAWN_SALT) + (int(tag) + 1) * _GAMMA) & _MASK64)
        return Rng(child)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ, {a.shape[0]}x{a.shape[1]} times "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function 1/(1+exp(-x)), overflow-safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def dsigmoid(y: np.ndarray) -> np.ndarray:
    """Sigmoid derivative y*(1-y), taking the function VALUE as input."""
    y = np.asarray(y, dtype=np.float64)
    return y * (1.0 - y)


def dtanh(y: np.ndarray) -> np.ndarray:
    """tanh derivative 1-y^2, taking the function VALUE as input."""
    y = np.asarray(y, dtype=np.float64)
    return 1.0 - y * y


def random_orthogonal(n: int, rng: Rng) -> np.ndarray:
    """Haar-like random orthogonal n x n matrix.

    QR of an i.i.d. standard-normal matrix with the sign convention
    diag(R) > 0, which makes the factorization (and hence the draw) unique.
    """
    if n < 1:
        raise ValueError(f"random_orthogonal: n must be >= 1, got {n}")
    a = rng.normal(n, n)
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs  # scales columns


def svd_values(a: np.ndarray) -> np.ndarray:
    """All min(rows, cols) singular values, descending.

    Delegates to LAPACK; the accuracy contract (Frobenius norm reconstructed
    from the values to relative 1e-10) is enforced by the test suite against
    an independent Jacobi eigenvalue oracle.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"svd_values: expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd_values: input contains non-finite entries")
    return np.linalg.svd(a, compute_uv=False)


def gaussian(rows: int, cols: int, scale: float, rng: Rng) -> np.ndarray:
    """rows x cols matrix of i.i.d. N(0, scale^2) entries."""
    if scale <= 0:
        raise ValueError(f"gaussian: scale must be > 0, got {scale}")
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian: dimensions must be >= 1, got {rows}x{cols}")
    return rng.normal(rows, cols, scale=scale)
