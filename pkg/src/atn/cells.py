"""Recurrent cells and full-sequence backpropagation through time.

One LSTM implementation covers three modes:

* ``plain`` - no normalization,
* ``ln``    - per-step layer norm on both gate branches and the memory cell,
* ``atn``   - windowed normalization with window length ``k`` (``ln`` is the
  ``k == 1`` path of the same code).

Gate stacking along the 4n axis is (f, i, o, g).  The bias sits outside the
norms by default; ``bias_inside_norm`` moves it into the input branch's
pre-norm linear map, which is the variant most implementations use.

The backward pass is exact.  A normalization at step ``t`` holds the last
``k_t`` preactivations, so its Jacobian routes gradient to steps
``t-k_t+1 .. t``; contributions to earlier steps are parked in pending
accumulators and folded in when the reverse sweep reaches those steps,
at which point every later window has already reported in.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .norm import (AtnBuffer, AtnTape, NormParams, WindowGradAccumulator,
                   atn_forward_step)
from .numkit import Rng, ShapeError, sigmoid

__all__ = [
    "LstmParams",
    "RnnParams",
    "CellState",
    "SequenceTape",
    "LstmModel",
    "init_lstm",
    "scale_weights",
    "rnn_forward_sequence",
    "init_rnn",
]


@dataclass
class LstmParams:
    W_h: np.ndarray          # (4n, n)
    W_x: np.ndarray          # (4n, d)
    b: np.ndarray            # (4n,)
    norm_hh: NormParams      # width 4n
    norm_ih: NormParams      # width 4n
    norm_cell: NormParams    # width n
    mode: str = "plain"      # plain | ln | atn
    k: int = 1
    bias_inside_norm: bool = False

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    @property
    def window(self) -> int:
        """Effective window length: 1 unless in atn mode."""
        return self.k if self.mode == "atn" else 1


@dataclass
class RnnParams:
    W_h: np.ndarray          # (n, n)
    W_x: np.ndarray          # (n, d)
    beta_h: np.ndarray       # (n,)
    W_y: np.ndarray          # (out, n)
    beta_y: np.ndarray       # (out,)
    norm_hh: NormParams
    norm_ih: NormParams
    norm_y: NormParams
    mode: str = "plain"
    k: int = 1

    @property
    def window(self) -> int:
        return self.k if self.mode == "atn" else 1


class CellState:
    """Hidden/cell state plus the three norm windows of one live sequence."""

    def __init__(self, params: LstmParams, batch: int):
        n = params.hidden
        self.h = np.zeros((batch, n))
        self.c = np.zeros((batch, n))
        self.normalized = params.mode in ("ln", "atn")
        k = params.window
        if self.normalized:
            self.buf_hh = AtnBuffer(k)
            self.buf_ih = AtnBuffer(k)
            self.buf_cell = AtnBuffer(k)

    def reset(self) -> None:
        self.h[:] = 0.0
        self.c[:] = 0.0
        if self.normalized:
            self.buf_hh.reset()
            self.buf_ih.reset()
            self.buf_cell.reset()


@dataclass
class StepRecord:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tc: np.ndarray           # tanh of the (normalized) cell
    h: np.ndarray


@dataclass
class SequenceTape:
    steps: list[StepRecord] = field(default_factory=list)
    tape_hh: AtnTape = field(default_factory=AtnTape)
    tape_ih: AtnTape = field(default_factory=AtnTape)
    tape_cell: AtnTape = field(default_factory=AtnTape)

    def __len__(self) -> int:
        return len(self.steps)


class LstmModel:
    """LSTM with an affine readout, exact forward/backward over sequences."""

    def __init__(self, params: LstmParams, W_out: np.ndarray, b_out: np.ndarray,
                 output_mode: str = "per_step", stop_window_gradient: bool = False):
        if output_mode not in ("per_step", "final"):
            raise ValueError(f"unknown output_mode {output_mode!r}")
        self.params = params
        self.W_out = W_out       # (n, out)
        self.b_out = b_out       # (out,)
        self.output_mode = output_mode
        self.stop_window_gradient = stop_window_gradient

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        p = self.params
        out = {"W_h": p.W_h, "W_x": p.W_x, "b": p.b,
               "W_out": self.W_out, "b_out": self.b_out}
        if p.mode in ("ln", "atn"):
            out.update({
                "gamma_hh": p.norm_hh.gamma, "beta_hh": p.norm_hh.beta,
                "gamma_ih": p.norm_ih.gamma, "beta_ih": p.norm_ih.beta,
                "gamma_cell": p.norm_cell.gamma, "beta_cell": p.norm_cell.beta,
            })
        return out

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        p = self.params
        out = self.parameters()
        if p.mode in ("ln", "atn") and not p.norm_hh.trainable:
            for name in ("gamma_hh", "beta_hh", "gamma_ih", "beta_ih",
                         "gamma_cell", "beta_cell"):
                out.pop(name)
        return out

    # -- forward ------------------------------------------------------------

    def init_state(self, batch: int) -> CellState:
        return CellState(self.params, batch)

    def step(self, state: CellState, x: np.ndarray, tape: SequenceTape) -> np.ndarray:
        """One cell update; mutates ``state`` and appends to ``tape``."""
        p = self.params
        n = p.hidden
        if x.shape[1] != p.input_dim:
            raise ShapeError(f"input dim {x.shape[1]}, expected {p.input_dim}")
        h_prev = state.h
        c_prev = state.c

        a_hh = h_prev @ p.W_h.T
        a_ih = x @ p.W_x.T
        if p.bias_inside_norm:
            a_ih = a_ih + p.b

        if state.normalized:
            y_hh = atn_forward_step(state.buf_hh, a_hh, p.norm_hh, tape.tape_hh)
            y_ih = atn_forward_step(state.buf_ih, a_ih, p.norm_ih, tape.tape_ih)
        else:
            y_hh, y_ih = a_hh, a_ih

        z = y_hh + y_ih
        if not p.bias_inside_norm:
            z = z + p.b

        f = sigmoid(z[:, 0 * n:1 * n])
        i = sigmoid(z[:, 1 * n:2 * n])
        o = sigmoid(z[:, 2 * n:3 * n])
        g = np.tanh(z[:, 3 * n:4 * n])
        c = f * c_prev + i * g

        if state.normalized:
            y_c = atn_forward_step(state.buf_cell, c, p.norm_cell, tape.tape_cell)
        else:
            y_c = c
        tc = np.tanh(y_c)
        h = o * tc

        tape.steps.append(StepRecord(x, h_prev, c_prev, f, i, o, g, c, tc, h))
        state.h = h
        state.c = c
        return h

    def forward_sequence(self, x_seq: np.ndarray, state: CellState | None = None):
        """Unroll over ``x_seq`` of shape (T, batch, d).

        Returns ``(outputs, tape)``: per-step logits (T, batch, out) or the
        final-step affine readout (batch, out), per ``output_mode``.
        """
        x_seq = np.asarray(x_seq, dtype=np.float64)
        T, batch, _ = x_seq.shape
        if state is None:
            state = self.init_state(batch)
        tape = SequenceTape()
        hs = []
        for t in range(T):
            hs.append(self.step(state, x_seq[t], tape))
        if self.output_mode == "per_step":
            outputs = np.stack([h @ self.W_out + self.b_out for h in hs])
        else:
            outputs = hs[-1] @ self.W_out + self.b_out
        return outputs, tape

    def hidden_trajectory(self, x_seq: np.ndarray) -> np.ndarray:
        """(T, batch, n) hidden states for a fresh run; forward only."""
        _, tape = self.forward_sequence(np.asarray(x_seq, dtype=np.float64))
        return np.stack([rec.h for rec in tape.steps])

    # -- backward -----------------------------------------------------------

    def backward_sequence(self, tape: SequenceTape, dout) -> dict[str, np.ndarray]:
        """Exact gradients of a scalar loss given d(loss)/d(outputs).

        ``dout`` matches the shape returned by :meth:`forward_sequence`.
        Returns one gradient per trainable parameter name.  The tape must
        cover a whole sequence started from a fresh state (the window
        accumulators assume the first recorded step began with empty
        buffers).
        """
        p = self.params
        T = len(tape)
        if T == 0:
            raise ValueError("backward_sequence: empty tape")
        n = p.hidden
        batch = tape.steps[0].h.shape[0]
        normalized = p.mode in ("ln", "atn")
        if normalized and (len(tape.tape_hh) != T or len(tape.tape_cell) != T):
            raise ValueError("backward_sequence: incomplete norm tape")
        dout = np.asarray(dout, dtype=np.float64)

        grads = {name: np.zeros_like(arr) for name, arr in self.parameters().items()}

        stop = self.stop_window_gradient
        if normalized:
            k = p.window
            acc_hh = WindowGradAccumulator(tape.tape_hh, p.norm_hh, k, stop)
            acc_ih = WindowGradAccumulator(tape.tape_ih, p.norm_ih, k, stop)
            acc_c = WindowGradAccumulator(tape.tape_cell, p.norm_cell, k, stop)

        dh = np.zeros((batch, n))
        dc = np.zeros((batch, n))

        for t in range(T - 1, -1, -1):
            rec = tape.steps[t]
            if self.output_mode == "per_step":
                d_logit = dout[t]
            else:
                d_logit = dout if t == T - 1 else None
            if d_logit is not None:
                grads["W_out"] += rec.h.T @ d_logit
                grads["b_out"] += d_logit.sum(axis=0)
                dh = dh + d_logit @ self.W_out.T

            do = dh * rec.tc
            dtc = dh * rec.o
            dy_c = dtc * (1.0 - rec.tc ** 2)

            if normalized:
                dc = dc + acc_c.step(t, dy_c)
            else:
                dc = dc + dy_c

            df = dc * rec.c_prev
            di = dc * rec.g
            dg = dc * rec.i
            dc = dc * rec.f  # carried to step t-1

            dz = np.concatenate([
                df * rec.f * (1.0 - rec.f),
                di * rec.i * (1.0 - rec.i),
                do * rec.o * (1.0 - rec.o),
                dg * (1.0 - rec.g ** 2),
            ], axis=1)

            if not p.bias_inside_norm:
                grads["b"] += dz.sum(axis=0)

            if normalized:
                da_hh_t = acc_hh.step(t, dz)
                da_ih_t = acc_ih.step(t, dz)
            else:
                da_hh_t = dz
                da_ih_t = dz

            grads["W_h"] += da_hh_t.T @ rec.h_prev
            grads["W_x"] += da_ih_t.T @ rec.x
            if p.bias_inside_norm:
                grads["b"] += da_ih_t.sum(axis=0)
            dh = da_hh_t @ p.W_h

        if normalized and "gamma_hh" in grads:
            grads["gamma_hh"] += acc_hh.dgamma
            grads["beta_hh"] += acc_hh.dbeta
            grads["gamma_ih"] += acc_ih.dgamma
            grads["beta_ih"] += acc_ih.dbeta
            grads["gamma_cell"] += acc_c.dgamma
            grads["beta_cell"] += acc_c.dbeta

        trainable = self.trainable_parameters()
        return {name: grads[name] for name in trainable}


def init_lstm(n: int, d: int, out: int, mode: str, k: int, rng: Rng,
              epsilon: float = 1e-5, trainable_norm: bool = True,
              bias_inside_norm: bool = False, output_mode: str = "per_step",
              forget_bias: float = 1.0,
              stop_window_gradient: bool = False) -> LstmModel:
    """Seeded fan-in-scaled initialization; forget-gate bias slots start at 1."""
    if mode not in ("plain", "ln", "atn"):
        raise ValueError(f"unknown mode {mode!r}")
    s_h = 1.0 / np.sqrt(n)
    s_x = 1.0 / np.sqrt(d)
    W_h = rng.uniform(-s_h, s_h, (4 * n, n))
    W_x = rng.uniform(-s_x, s_x, (4 * n, d))
    b = np.zeros(4 * n)
    b[:n] = forget_bias
    params = LstmParams(
        W_h=W_h, W_x=W_x, b=b,
        norm_hh=NormParams.create(4 * n, epsilon, trainable_norm),
        norm_ih=NormParams.create(4 * n, epsilon, trainable_norm),
        norm_cell=NormParams.create(n, epsilon, trainable_norm),
        mode=mode, k=(k if mode == "atn" else 1),
        bias_inside_norm=bias_inside_norm,
    )
    W_out = rng.uniform(-s_h, s_h, (n, out))
    b_out = np.zeros(out)
    return LstmModel(params, W_out, b_out, output_mode,
                     stop_window_gradient=stop_window_gradient)


def scale_weights(params: LstmParams, delta: float) -> LstmParams:
    """Copy of ``params`` with the recurrent weight matrix scaled by delta."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    scaled = copy.deepcopy(params)
    scaled.W_h = scaled.W_h * float(delta)
    return scaled


# ---------------------------------------------------------------------------
# Plain RNN cell (forward only; used for invariance properties)
# ---------------------------------------------------------------------------

def init_rnn(n: int, d: int, out: int, mode: str, k: int, rng: Rng,
             epsilon: float = 1e-5) -> RnnParams:
    if mode not in ("plain", "ln", "atn"):
        raise ValueError(f"unknown mode {mode!r}")
    s_h = 1.0 / np.sqrt(n)
    s_x = 1.0 / np.sqrt(d)
    return RnnParams(
        W_h=rng.uniform(-s_h, s_h, (n, n)),
        W_x=rng.uniform(-s_x, s_x, (n, d)),
        beta_h=np.zeros(n),
        W_y=rng.uniform(-s_h, s_h, (out, n)),
        beta_y=np.zeros(out),
        norm_hh=NormParams.create(n, epsilon),
        norm_ih=NormParams.create(n, epsilon),
        norm_y=NormParams.create(out, epsilon),
        mode=mode, k=(k if mode == "atn" else 1),
    )


def rnn_forward_sequence(params: RnnParams, x_seq: np.ndarray,
                         normalize_readout: bool = True,
                         h0: np.ndarray | None = None):
    """Tanh RNN unroll; returns (h_seq, y_seq) of shapes (T,B,n), (T,B,out)."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    T, batch, _ = x_seq.shape
    n = params.W_h.shape[0]
    h = np.zeros((batch, n)) if h0 is None else np.asarray(h0, dtype=np.float64)
    normalized = params.mode in ("ln", "atn")
    if normalized:
        k = params.window
        buf_hh, buf_ih, buf_y = AtnBuffer(k), AtnBuffer(k), AtnBuffer(k)
        t_hh, t_ih, t_y = AtnTape(), AtnTape(), AtnTape()
    hs, ys = [], []
    for t in range(T):
        a_hh = h @ params.W_h.T
        a_ih = x_seq[t] @ params.W_x.T
        if normalized:
            a_hh = atn_forward_step(buf_hh, a_hh, params.norm_hh, t_hh)
            a_ih = atn_forward_step(buf_ih, a_ih, params.norm_ih, t_ih)
        h = np.tanh(a_hh + a_ih + params.beta_h)
        a_y = h @ params.W_y.T
        if normalized and normalize_readout:
            a_y = atn_forward_step(buf_y, a_y, params.norm_y, t_y)
        ys.append(a_y + params.beta_y)
        hs.append(h)
    return np.stack(hs), np.stack(ys)
