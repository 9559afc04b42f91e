"""Windowed (assorted-time) normalization for LSTMs, from scratch.

A small float64 numeric kit, normalization operators with exact analytic
backward passes, recurrent cells with full-sequence BPTT, synthetic task
generators, first-order optimizers, and a deterministic experiment harness.
"""

from .numkit import Rng, cross_entropy_logits, matmul, mse
from .norm import AtnBuffer, AtnTape, NormParams, atn_backward, atn_forward_step
from .cells import LstmModel, LstmParams, init_lstm, scale_weights
from .harness import TrainConfig, run_gradcheck, run_ksweep, run_stats, run_training

__all__ = [
    "Rng", "cross_entropy_logits", "matmul", "mse",
    "AtnBuffer", "AtnTape", "NormParams", "atn_backward", "atn_forward_step",
    "LstmModel", "LstmParams", "init_lstm", "scale_weights",
    "TrainConfig", "run_gradcheck", "run_ksweep", "run_stats", "run_training",
]

__version__ = "0.1.0"
