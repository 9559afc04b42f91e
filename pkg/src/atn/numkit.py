"""Dense float64 linear algebra, nonlinearities, losses, and a seedable RNG.

Everything downstream works on plain ``numpy.ndarray`` objects with dtype
float64.  The helpers here add the shape checking and the loss gradients the
rest of the package relies on; nothing in this module keeps state except
:class:`Rng`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Rng",
    "as_matrix",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "softmax",
    "cross_entropy_logits",
    "mse",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(data) -> np.ndarray:
    """Coerce to a float64 2-D array."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def add(a, b):
    _check_same_shape(np.asarray(a), np.asarray(b), "add")
    return np.add(a, b)


def sub(a, b):
    _check_same_shape(np.asarray(a), np.asarray(b), "sub")
    return np.subtract(a, b)


def mul(a, b):
    """Hadamard (entrywise) product."""
    _check_same_shape(np.asarray(a), np.asarray(b), "mul")
    return np.multiply(a, b)


def scale(a, c: float):
    return np.asarray(a, dtype=np.float64) * float(c)


def sigmoid(x):
    # exp may overflow to inf for very negative x; 1/(1+inf) == 0 is exact
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_logits(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. the logits.

    ``targets`` holds one class index per row.  Returns
    ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / rows``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.intp).ravel()
    rows, cols = logits.shape
    if targets.shape[0] != rows:
        raise ShapeError(
            f"cross_entropy_logits: {rows} rows but {targets.shape[0]} targets"
        )
    if targets.min(initial=0) < 0 or (rows and targets.max() >= cols):
        raise IndexError(
            f"target index out of range for {cols} classes: "
            f"min={targets.min()}, max={targets.max()}"
        )
    p = softmax(logits)
    idx = np.arange(rows)
    # log-softmax evaluated directly for stability
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[idx, targets].mean())
    dlogits = p
    dlogits[idx, targets] -= 1.0
    dlogits /= rows
    return loss, dlogits


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(pred, target, "mse")
    diff = pred - target
    n = diff.size
    loss = float((diff * diff).sum() / n)
    return loss, 2.0 * diff / n


# ---------------------------------------------------------------------------
# Random number generation
# ---------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream generator.

    The state is ``seed + n * 0x9E3779B97F4A7C15 (mod 2^64)`` after ``n``
    draws; each output is the standard SplitMix64 finalizer applied to the
    advanced state.  Self-contained and bit-reproducible for a given seed
    on any platform, and trivially vectorizable since draw ``n`` depends
    only on ``(seed, n)``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._count = 0

    def _next_bits(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
            state = np.uint64(self.seed) + idx * _GAMMA
            out = _mix64(state)
        self._count += n
        return out

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        """I.i.d. samples from [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform: need lo < hi, got [{lo}, {hi})")
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        u = (self._next_bits(n) >> np.uint64(11)) * (2.0 ** -53)
        out = lo + u * (hi - lo)
        return out.reshape(shape) if shape else float(out[0])

    def gaussian(self, mean: float, var: float, shape=()) -> np.ndarray:
        """I.i.d. Gaussian samples via Box-Muller; ``var`` is the variance."""
        if var < 0:
            raise ValueError(f"gaussian: variance must be >= 0, got {var}")
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        if var == 0.0:
            out = np.full(n, float(mean))
        else:
            m = (n + 1) // 2
            u1 = (self._next_bits(m) >> np.uint64(11)) * (2.0 ** -53)
            u2 = (self._next_bits(m) >> np.uint64(11)) * (2.0 ** -53)
            r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1], log never -inf
            theta = 2.0 * np.pi * u2
            z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
            out = mean + np.sqrt(var) * z
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """I.i.d. integers in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"integers: need lo < hi, got [{lo}, {hi})")
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        u = (self._next_bits(n) >> np.uint64(11)) * (2.0 ** -53)
        out = (lo + np.floor(u * (hi - lo))).astype(np.int64)
        return out.reshape(shape) if shape else int(out[0])

    def choice_without_replacement(self, n: int, m: int) -> np.ndarray:
        """m distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= m <= n:
            raise ValueError(f"cannot draw {m} distinct values from range({n})")
        pool = np.arange(n, dtype=np.int64)
        for i in range(m):
            j = self.integers(i, n)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:m].copy()
