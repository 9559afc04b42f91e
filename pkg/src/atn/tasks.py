"""Seeded generators for the synthetic sequence tasks and MNIST ingestion.

Every generator is a pure function of (rng, parameters), so a fixed seed
reproduces batches exactly.  Batches come out time-major: inputs are
(T, batch, d).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng

__all__ = [
    "TaskBatch",
    "MnistSet",
    "MnistFormatError",
    "gen_copy",
    "gen_add",
    "gen_denoise",
    "load_mnist",
    "to_pixel_sequence",
    "copy_baseline",
    "ADD_BASELINE_MSE",
    "DENOISE_ALPHABET",
]

# data symbols in the denoise dictionary; +noise +marker gives input width 12
DENOISE_ALPHABET = 10

# variance of the sum of two independent U[0,1) values: best constant predictor
ADD_BASELINE_MSE = 1.0 / 6.0


def copy_baseline(T: int) -> float:
    """Expected cross-entropy of the memory-free strategy on the copy task."""
    return 10.0 * np.log(8.0) / (T + 20)


@dataclass
class TaskBatch:
    """One batch of a task.

    ``kind`` selects the loss: ``seq_class`` scores per-step class targets
    (T, batch) under ``loss_mask`` (T,), ``scalar_reg`` scores a (batch, 1)
    regression target at the final step, ``final_class`` a (batch,) class
    target at the final step.
    """

    name: str
    kind: str
    inputs: np.ndarray           # (T, batch, d)
    targets: np.ndarray
    loss_mask: np.ndarray        # (T,) weights in {0, 1}
    n_classes: int | None = None
    baseline: float | None = None
    answer_mask: np.ndarray | None = None  # (T,) positions scored for accuracy

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def batch(self) -> int:
        return self.inputs.shape[1]


def _one_hot(idx: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(idx.shape + (width,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def gen_copy(T: int, batch: int, rng: Rng) -> TaskBatch:
    """Copy task: recall 10 digits after a delay of ~T blank steps.

    Layout over the T+20 steps: 10 digits from {1..8}, T-1 blanks, the
    marker symbol 9, then 10 blanks during which the digits must be
    reproduced.  Every step is scored (blanks carry class 0), which is the
    convention under which the memory-free baseline equals
    10*ln(8)/(T+20); ``answer_mask`` flags the 10 recall steps for
    accuracy reporting.
    """
    if T < 1:
        raise ValueError(f"copy task needs T >= 1, got {T}")
    total = T + 20
    digits = rng.integers(1, 9, (10, batch))
    seq = np.zeros((total, batch), dtype=np.int64)
    seq[:10] = digits
    seq[T + 9] = 9
    targets = np.zeros((total, batch), dtype=np.int64)
    targets[T + 10:] = digits
    answer_mask = np.zeros(total)
    answer_mask[T + 10:] = 1.0
    return TaskBatch(
        name="copy", kind="seq_class",
        inputs=_one_hot(seq, 10),
        targets=targets,
        loss_mask=np.ones(total),
        n_classes=10,
        baseline=copy_baseline(T),
        answer_mask=answer_mask,
    )


def gen_add(T: int, batch: int, rng: Rng) -> TaskBatch:
    """Adding task: sum the two values flagged by the indicator channel."""
    if T < 2:
        raise ValueError(f"adding task needs T >= 2, got {T}")
    values = rng.uniform(0.0, 1.0, (T, batch))
    half = T // 2
    pos1 = rng.integers(0, half, (batch,))
    pos2 = rng.integers(half, T, (batch,))
    indicator = np.zeros((T, batch))
    cols = np.arange(batch)
    indicator[pos1, cols] = 1.0
    indicator[pos2, cols] = 1.0
    inputs = np.stack([indicator, values], axis=2)
    targets = (values[pos1, cols] + values[pos2, cols])[:, None]
    mask = np.zeros(T)
    mask[-1] = 1.0
    return TaskBatch(
        name="add", kind="scalar_reg",
        inputs=inputs, targets=targets, loss_mask=mask,
        baseline=ADD_BASELINE_MSE,
    )


def gen_denoise(T: int, batch: int, rng: Rng,
                alphabet: int = DENOISE_ALPHABET) -> TaskBatch:
    """Denoise task: replay the 10 data symbols after the marker.

    Steps 0..T-2 carry 10 data symbols at random positions and noise
    elsewhere; the marker sits at step T-1, and the 10 following steps are
    scored.  Input classes: ``alphabet`` data symbols, then noise, then
    marker (width alphabet+2); output classes: the data symbols only.
    """
    if T < 11:
        raise ValueError(f"denoise task needs T >= 11, got {T}")
    total = T + 10
    noise_sym = alphabet
    marker_sym = alphabet + 1
    seq = np.full((total, batch), noise_sym, dtype=np.int64)
    targets = np.zeros((total, batch), dtype=np.int64)
    for b in range(batch):
        pos = np.sort(rng.choice_without_replacement(T - 1, 10))
        symbols = rng.integers(0, alphabet, (10,))
        seq[pos, b] = symbols
        targets[T:, b] = symbols
    seq[T - 1] = marker_sym
    seq[T:] = noise_sym
    mask = np.zeros(total)
    mask[T:] = 1.0
    return TaskBatch(
        name="denoise", kind="seq_class",
        inputs=_one_hot(seq, alphabet + 2),
        targets=targets, loss_mask=mask,
        n_classes=alphabet,
        baseline=float(np.log(alphabet)),
        answer_mask=mask.copy(),
    )


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------

class MnistFormatError(ValueError):
    """Raised for malformed IDX files."""


@dataclass
class MnistSet:
    images: np.ndarray   # (count, 784) in [0, 1]
    labels: np.ndarray   # (count,) ints 0-9

    @property
    def count(self) -> int:
        return self.images.shape[0]


def _read_idx(path: str):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise MnistFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", data[:4])[0]
    return magic, data


def load_mnist(images_path: str, labels_path: str) -> MnistSet:
    """Parse the big-endian IDX pair; pixels come back scaled to [0, 1]."""
    magic, data = _read_idx(images_path)
    if magic != 2051:
        raise MnistFormatError(f"{images_path}: bad magic {magic}, expected 2051")
    count, rows, cols = struct.unpack(">III", data[4:16])
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise MnistFormatError(
            f"{images_path}: {pixels.size} pixels for {count} x {rows}x{cols} images"
        )
    images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    magic, data = _read_idx(labels_path)
    if magic != 2049:
        raise MnistFormatError(f"{labels_path}: bad magic {magic}, expected 2049")
    lcount = struct.unpack(">I", data[4:8])[0]
    labels = np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size != lcount:
        raise MnistFormatError(f"{labels_path}: {labels.size} labels, header says {lcount}")
    if lcount != count:
        raise MnistFormatError(
            f"image/label count mismatch: {count} images vs {lcount} labels"
        )
    return MnistSet(images, labels)


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Write (count, 784) byte images as an IDX file (test fixture helper)."""
    count = images.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, count, 28, 28))
        fh.write(np.asarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, labels.shape[0]))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def to_pixel_sequence(mnist: MnistSet, rng: Rng, noise_var: float,
                      batch: int, indices: np.ndarray | None = None):
    """Yield pixel-by-pixel batches: length-784, d=1 sequences with noise.

    Each image becomes a sequence of its 784 pixel values plus i.i.d.
    Gaussian noise of the given variance; the class label is scored at the
    final step.
    """
    if noise_var < 0:
        raise ValueError(f"noise variance must be >= 0, got {noise_var}")
    if indices is None:
        indices = np.arange(mnist.count)
    for start in range(0, len(indices), batch):
        sel = indices[start:start + batch]
        imgs = mnist.images[sel]                       # (b, 784)
        if noise_var > 0:
            imgs = imgs + rng.gaussian(0.0, noise_var, imgs.shape)
        inputs = imgs.T[:, :, None]                    # (784, b, 1)
        mask = np.zeros(784)
        mask[-1] = 1.0
        yield TaskBatch(
            name="mnist-pixel", kind="final_class",
            inputs=inputs, targets=mnist.labels[sel].copy(),
            loss_mask=mask, n_classes=10,
        )
