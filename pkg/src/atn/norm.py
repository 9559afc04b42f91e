"""Layer normalization and its assorted-time (sliding window) extension.

The windowed operator pools statistics over the last ``k`` preactivation
vectors of a sequence and normalizes only the newest one.  Layer norm is
exactly the ``k == 1`` case.  All statistics are per batch sample, taken
over the hidden dimension and the buffered time steps, never over the
batch.  Forward passes record everything the exact backward pass needs:
one value snapshot per pushed step plus the per-step window statistics.

The backward pass exploits that a window's gradient contribution to any
buffered entry ``a_s`` is affine in ``a_s`` with per-sample scalar
coefficients, so accumulating across overlapping windows only needs
sliding sums of those scalars rather than re-touching whole windows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NormParams",
    "AtnBuffer",
    "AtnTape",
    "ln_forward",
    "ln_backward",
    "atn_forward_step",
    "atn_backward_step",
    "atn_backward",
    "buffer_reset",
]

# incremental window sums are recomputed exactly this often to stop drift
_REFRESH_EVERY = 64


@dataclass
class NormParams:
    """Gain, bias and stabilizer for one normalization group of width n."""

    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5
    trainable: bool = True

    @classmethod
    def create(cls, n: int, epsilon: float = 1e-5, trainable: bool = True) -> "NormParams":
        return cls(np.ones(n), np.zeros(n), float(epsilon), trainable)

    @property
    def width(self) -> int:
        return self.gamma.shape[0]


class AtnBuffer:
    """Sliding window of the last ``capacity`` preactivation batches.

    Keeps running per-sample sums of entries and squared entries so each
    step's statistics cost O(batch * n) regardless of the window length.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"window length must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.entries: deque[np.ndarray] = deque()
        self._s1 = None  # (batch,) sum over window entries
        self._s2 = None  # (batch,) sum of squares
        self._pushes = 0

    @property
    def fill(self) -> int:
        return len(self.entries)

    def reset(self) -> None:
        self.entries.clear()
        self._s1 = None
        self._s2 = None
        self._pushes = 0

    def push(self, a: np.ndarray) -> np.ndarray:
        """Append a value copy of ``a``, evicting the oldest entry if full.

        Returns the stored copy (callers may keep it; it is never mutated).
        """
        a = np.array(a, dtype=np.float64, copy=True)
        self.entries.append(a)
        self._pushes += 1
        if self._s1 is None:
            self._s1 = a.sum(axis=1)
            self._s2 = (a * a).sum(axis=1)
        else:
            self._s1 = self._s1 + a.sum(axis=1)
            self._s2 = self._s2 + (a * a).sum(axis=1)
        if len(self.entries) > self.capacity:
            old = self.entries.popleft()
            self._s1 = self._s1 - old.sum(axis=1)
            self._s2 = self._s2 - (old * old).sum(axis=1)
        if self._pushes % _REFRESH_EVERY == 0:
            self._recompute()
        return a

    def _recompute(self) -> None:
        self._s1 = sum(e.sum(axis=1) for e in self.entries)
        self._s2 = sum((e * e).sum(axis=1) for e in self.entries)

    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample (mean, population variance) over all buffered entries."""
        count = self.fill * self.entries[0].shape[1]
        mu = self._s1 / count
        var = np.maximum(self._s2 / count - mu * mu, 0.0)
        return mu, var


def buffer_reset(buffer: AtnBuffer) -> None:
    """Start a new sequence: the next step normalizes like plain layer norm."""
    buffer.reset()


@dataclass
class AtnTape:
    """Per-step normalization records for one sequence, in forward order."""

    entries: list[np.ndarray] = field(default_factory=list)  # (batch, n) each
    mu: list[np.ndarray] = field(default_factory=list)       # (batch,) each
    var: list[np.ndarray] = field(default_factory=list)
    k_t: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.mu)

    def reset(self) -> None:
        self.entries.clear()
        self.mu.clear()
        self.var.clear()
        self.k_t.clear()

    def window(self, t: int) -> np.ndarray:
        """(k_t, batch, n) window that normalized step ``t``, newest first."""
        k_t = self.k_t[t]
        return np.stack(self.entries[t - k_t + 1:t + 1][::-1], axis=0)


def _normalize(a, mu, var, params):
    inv = 1.0 / np.sqrt(var + params.epsilon)
    return params.gamma * ((a - mu[:, None]) * inv[:, None]) + params.beta


def ln_forward(a: np.ndarray, params: NormParams):
    """Normalize each row of ``a`` over its n entries.

    Returns ``(y, cache)``; the cache feeds :func:`ln_backward`.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[1]
    s1 = a.sum(axis=1)
    mu = s1 / n
    var = np.maximum((a * a).sum(axis=1) / n - mu * mu, 0.0)
    y = _normalize(a, mu, var, params)
    return y, (a.copy(), mu, var, params)


def ln_backward(cache, dy: np.ndarray):
    """Exact gradients for :func:`ln_forward`."""
    a, mu, var, params = cache
    dy = np.asarray(dy, dtype=np.float64)
    n = a.shape[1]
    inv = 1.0 / np.sqrt(var + params.epsilon)
    xc = a - mu[:, None]
    g = dy * params.gamma
    dvar = -0.5 * (g * xc).sum(axis=1) * inv ** 3
    dmu = -(g.sum(axis=1)) * inv
    da = g * inv[:, None] + (dmu / n)[:, None] + (2.0 / n) * dvar[:, None] * xc
    dgamma = (dy * xc * inv[:, None]).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return da, dgamma, dbeta


def atn_forward_step(buffer: AtnBuffer, a: np.ndarray, params: NormParams,
                     tape: AtnTape) -> np.ndarray:
    """Push ``a`` into the window and normalize it with window statistics.

    Statistics pool all ``n * k_t`` buffered entries per batch sample
    (``k_t = min(steps pushed, capacity)``); only the current entry is
    normalized.  Appends a record to ``tape``.
    """
    a = np.asarray(a, dtype=np.float64)
    stored = buffer.push(a)
    mu, var = buffer.stats()
    y = _normalize(a, mu, var, params)
    tape.entries.append(stored)
    tape.mu.append(mu)
    tape.var.append(var)
    tape.k_t.append(buffer.fill)
    return y


def window_coefficients(tape: AtnTape, t: int, dy: np.ndarray, params: NormParams):
    """Per-sample pieces of step ``t``'s window Jacobian product.

    The gradient this window routes to any buffered entry ``a_s`` is
    ``delta_{s,t} * g * inv + c2 * a_s + c1`` per sample, where ``g`` is
    the gamma-scaled upstream gradient.  Returns
    ``(direct, c1, c2, dgamma, dbeta)`` with ``direct`` of shape
    (batch, n) and ``c1``, ``c2`` of shape (batch,).
    """
    a = tape.entries[t]
    mu = tape.mu[t]
    var = tape.var[t]
    n = a.shape[1]
    count = n * tape.k_t[t]
    inv = 1.0 / np.sqrt(var + params.epsilon)
    xc = a - mu[:, None]
    g = dy * params.gamma
    dvar = -0.5 * (g * xc).sum(axis=1) * inv ** 3
    dmu = -(g.sum(axis=1)) * inv
    c2 = 2.0 * dvar / count
    c1 = dmu / count - c2 * mu
    direct = g * inv[:, None]
    dgamma = (dy * xc * inv[:, None]).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return direct, c1, c2, dgamma, dbeta


def atn_backward_step(tape: AtnTape, t: int, dy: np.ndarray, params: NormParams,
                      stop_window_gradient: bool = False):
    """Full window Jacobian product of step ``t``.

    Returns ``(da_window, dgamma, dbeta)`` with ``da_window[j]`` the
    gradient w.r.t. the entry ``j`` steps back (``j == 0`` is the current
    step).  ``stop_window_gradient`` zeroes the ``j >= 1`` routes.
    """
    dy = np.asarray(dy, dtype=np.float64)
    direct, c1, c2, dgamma, dbeta = window_coefficients(tape, t, dy, params)
    window = tape.window(t)
    da = c1[None, :, None] + c2[None, :, None] * window
    da[0] += direct
    if stop_window_gradient:
        da[1:] = 0.0
    return da, dgamma, dbeta


def atn_backward(tape: AtnTape, dy_seq, params: NormParams,
                 stop_window_gradient: bool = False):
    """Accumulate gradients for a whole normalized sequence.

    ``dy_seq`` holds one upstream gradient per recorded step.  Returns
    ``(da_seq, dgamma, dbeta)`` where ``da_seq[t]`` collects the
    contributions of every window that buffered step ``t``.
    """
    if len(dy_seq) != len(tape):
        raise ValueError(
            f"tape has {len(tape)} steps but got {len(dy_seq)} gradients"
        )
    n = params.width
    da_seq = [np.zeros_like(tape.entries[t]) for t in range(len(tape))]
    dgamma = np.zeros(n)
    dbeta = np.zeros(n)
    for t in range(len(tape) - 1, -1, -1):
        da, dg, db = atn_backward_step(tape, t, dy_seq[t], params,
                                       stop_window_gradient)
        dgamma += dg
        dbeta += db
        for j in range(tape.k_t[t]):
            da_seq[t - j] += da[j]
    return da_seq, dgamma, dbeta


class WindowGradAccumulator:
    """Streaming accumulator for overlapping window gradients in a reverse sweep.

    Feed steps in strictly decreasing order.  For each step it returns the
    complete gradient w.r.t. that step's pushed entry, already including
    the contributions of every later window that still buffered it.
    """

    def __init__(self, tape: AtnTape, params: NormParams, capacity: int,
                 stop_window_gradient: bool = False):
        self.tape = tape
        self.params = params
        self.capacity = int(capacity)
        self.stop = stop_window_gradient
        self._live: deque[tuple[int, np.ndarray, np.ndarray]] = deque()
        self._sum_c1 = 0.0
        self._sum_c2 = 0.0
        self.dgamma = np.zeros(params.width)
        self.dbeta = np.zeros(params.width)

    def step(self, t: int, dy: np.ndarray) -> np.ndarray:
        direct, c1, c2, dg, db = window_coefficients(self.tape, t, dy, self.params)
        self.dgamma += dg
        self.dbeta += db
        a = self.tape.entries[t]
        if self.stop:
            # own window only: the j = 0 slice of the Jacobian
            return direct + c2[:, None] * a + c1[:, None]
        # windows at t' cover this step iff t' - t <= capacity - 1
        while self._live and self._live[0][0] - t > self.capacity - 1:
            _, old_c1, old_c2 = self._live.popleft()
            self._sum_c1 = self._sum_c1 - old_c1
            self._sum_c2 = self._sum_c2 - old_c2
        self._live.append((t, c1, c2))
        self._sum_c1 = self._sum_c1 + c1
        self._sum_c2 = self._sum_c2 + c2
        return direct + np.asarray(self._sum_c2)[:, None] * a \
            + np.asarray(self._sum_c1)[:, None]
