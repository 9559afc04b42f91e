"""Experiment configuration, training loop, and verification commands.

Everything here is deterministic given (config, seed): batch generation,
initialization, and evaluation all draw from fixed-seed streams, and the
emitted CSV/JSON bytes are reproducible.  Wall-clock timing is therefore
off by default and opt-in via ``record_wall_time``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tasks
from .cells import LstmModel, init_lstm
from .numkit import Rng, cross_entropy_logits, mse
from .optim import clip_global_norm, global_norm, make_optimizer
from .tasks import TaskBatch

__all__ = [
    "ConfigError",
    "TrainConfig",
    "MetricsRow",
    "sequence_loss",
    "evaluate",
    "build_model",
    "make_batch_source",
    "run_training",
    "run_gradcheck",
    "run_stats",
    "run_ksweep",
]

TASKS = ("copy", "add", "denoise", "mnist-pixel")
MODES = ("plain", "ln", "atn")
OPTIMIZERS = ("sgd", "rmsprop", "adam")

# offset between the training stream seed and the held-out evaluation stream
VAL_SEED_OFFSET = 10007


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class TrainConfig:
    task: str = "copy"
    T: int = 100
    mode: str = "plain"
    k: int = 1
    hidden_n: int = 68
    batch: int = 128
    optimizer: str = "rmsprop"
    lr: float = 1e-4
    clip_norm: float = 0.0           # 0 disables clipping
    epsilon: float = 1e-5
    gamma_beta_trainable: bool = True
    bias_inside_norm: bool = False
    stop_window_gradient: bool = False
    seed: int = 0
    iterations: int = 1000
    eval_every: int = 100
    output_dir: str = "out"
    noise_var: float = 0.0           # mnist-pixel input noise
    mnist_dir: str = "data/mnist"
    record_wall_time: bool = False
    render_figures: bool = False

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task: unknown task {self.task!r}, expected one of {TASKS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown mode {self.mode!r}, expected one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer: unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}")
        if self.k < 1:
            raise ConfigError(f"k: window length must be >= 1, got {self.k}")
        if self.T < 2:
            raise ConfigError(f"T: sequence length must be >= 2, got {self.T}")
        if self.task == "denoise" and self.T < 11:
            raise ConfigError(f"T: denoise needs T >= 11, got {self.T}")
        if self.hidden_n < 1:
            raise ConfigError(f"hidden_n: must be >= 1, got {self.hidden_n}")
        if self.batch < 1:
            raise ConfigError(f"batch: must be >= 1, got {self.batch}")
        if self.lr <= 0:
            raise ConfigError(f"lr: must be > 0, got {self.lr}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm: must be >= 0 (0 disables), got {self.clip_norm}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon: must be >= 0, got {self.epsilon}")
        if self.iterations < 0:
            raise ConfigError(f"iterations: must be >= 0, got {self.iterations}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every: must be >= 1, got {self.eval_every}")
        if self.noise_var < 0:
            raise ConfigError(f"noise_var: must be >= 0, got {self.noise_var}")


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    return target_type(value)


def parse_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def load_config(path: str | None = None, overrides: dict | None = None,
                quick: bool = False) -> TrainConfig:
    """Build a validated config from a file, quick-preset keys, and overrides.

    File keys prefixed ``quick_`` take effect only when ``quick`` is set,
    replacing the matching base key.  ``overrides`` (already typed) win last.
    """
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {name: type(getattr(TrainConfig(), name)) for name in fields}
    values: dict = {}
    if path is not None:
        raw = parse_config_file(path)
        quick_raw = {k[len("quick_"):]: v for k, v in raw.items()
                     if k.startswith("quick_")}
        base_raw = {k: v for k, v in raw.items() if not k.startswith("quick_")}
        if quick:
            base_raw.update(quick_raw)
        for key, value in base_raw.items():
            if key not in types:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(value, types[key])
    if overrides:
        for key, value in overrides.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


@dataclass
class MetricsRow:
    iteration: int
    train_loss: float
    val_loss: float
    wall_time: float
    grad_norm: float

    FIELDS = ("iteration", "train_loss", "val_loss", "wall_time", "grad_norm")

    def csv_line(self) -> str:
        return ",".join([str(self.iteration)] + [
            repr(float(v)) for v in (self.train_loss, self.val_loss,
                                     self.wall_time, self.grad_norm)])


# ---------------------------------------------------------------------------
# Loss plumbing
# ---------------------------------------------------------------------------

def sequence_loss(outputs, batch: TaskBatch):
    """Scalar loss for a model's outputs on a batch, plus d(loss)/d(outputs)."""
    if batch.kind == "seq_class":
        T = batch.T
        mask = batch.loss_mask
        scored = float(mask.sum())
        loss = 0.0
        dout = np.zeros_like(outputs)
        for t in range(T):
            if mask[t] == 0.0:
                continue
            step_loss, dlogits = cross_entropy_logits(outputs[t], batch.targets[t])
            loss += step_loss
            dout[t] = dlogits
        return loss / scored, dout / scored
    if batch.kind == "scalar_reg":
        return mse(outputs, batch.targets)
    if batch.kind == "final_class":
        return cross_entropy_logits(outputs, batch.targets)
    raise ValueError(f"unknown batch kind {batch.kind!r}")


def accuracy(outputs, batch: TaskBatch) -> float:
    """Fraction of correct argmax predictions at the scored positions."""
    if batch.kind == "final_class":
        return float((outputs.argmax(axis=1) == batch.targets).mean())
    if batch.kind == "seq_class":
        mask = batch.answer_mask if batch.answer_mask is not None else batch.loss_mask
        steps = np.flatnonzero(mask)
        pred = outputs[steps].argmax(axis=2)
        return float((pred == batch.targets[steps]).mean())
    raise ValueError(f"accuracy undefined for kind {batch.kind!r}")


def evaluate(model: LstmModel, batch: TaskBatch) -> float:
    outputs, _ = model.forward_sequence(batch.inputs)
    loss, _ = sequence_loss(outputs, batch)
    return loss


# ---------------------------------------------------------------------------
# Model / data wiring
# ---------------------------------------------------------------------------

def _task_io(config: TrainConfig) -> tuple[int, int, str]:
    """(input_dim, output_dim, output_mode) for the configured task."""
    if config.task == "copy":
        return 10, 10, "per_step"
    if config.task == "denoise":
        return tasks.DENOISE_ALPHABET + 2, tasks.DENOISE_ALPHABET, "per_step"
    if config.task == "add":
        return 2, 1, "final"
    if config.task == "mnist-pixel":
        return 1, 10, "final"
    raise ConfigError(f"task: unknown task {config.task!r}")


def build_model(config: TrainConfig, rng: Rng) -> LstmModel:
    d, out, output_mode = _task_io(config)
    return init_lstm(
        n=config.hidden_n, d=d, out=out, mode=config.mode, k=config.k,
        rng=rng, epsilon=config.epsilon,
        trainable_norm=config.gamma_beta_trainable,
        bias_inside_norm=config.bias_inside_norm,
        output_mode=output_mode,
        stop_window_gradient=config.stop_window_gradient,
    )


def make_batch_source(config: TrainConfig, rng: Rng, train: bool = True):
    """Callable returning the next deterministic batch from ``rng``."""
    if config.task == "copy":
        return lambda: tasks.gen_copy(config.T, config.batch, rng)
    if config.task == "add":
        return lambda: tasks.gen_add(config.T, config.batch, rng)
    if config.task == "denoise":
        return lambda: tasks.gen_denoise(config.T, config.batch, rng)
    if config.task == "mnist-pixel":
        prefix = "train" if train else "t10k"
        mnist = tasks.load_mnist(
            _find_idx(config.mnist_dir, f"{prefix}-images-idx3-ubyte"),
            _find_idx(config.mnist_dir, f"{prefix}-labels-idx1-ubyte"),
        )

        def source(_state={"stream": None}):
            if _state["stream"] is None:
                order = np.argsort(rng.uniform(0.0, 1.0, (mnist.count,)))
                _state["stream"] = tasks.to_pixel_sequence(
                    mnist, rng, config.noise_var, config.batch, order)
            try:
                return next(_state["stream"])
            except StopIteration:
                _state["stream"] = None
                return source()
        return source
    raise ConfigError(f"task: unknown task {config.task!r}")


def _find_idx(directory: str, stem: str) -> str:
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_training(config: TrainConfig, metrics_name: str = "metrics.csv") -> MetricsRow:
    """Train per config, appending evaluation rows to the metrics CSV.

    Aborts with a diagnostic if the loss goes non-finite.  Returns the final
    metrics row.
    """
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)
    csv_path = os.path.join(config.output_dir, metrics_name)

    model = build_model(config, Rng(config.seed))
    train_source = make_batch_source(config, Rng(config.seed + 1), train=True)
    val_source = make_batch_source(config, Rng(config.seed + VAL_SEED_OFFSET),
                                   train=False)
    opt = make_optimizer(config.optimizer, config.lr)
    params = model.trainable_parameters()

    t0 = time.monotonic()
    rows: list[MetricsRow] = []
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(MetricsRow.FIELDS) + "\n")
        if config.iterations == 0:
            return MetricsRow(0, float("nan"), evaluate(model, val_source()), 0.0, 0.0)
        train_loss = float("nan")
        norm = 0.0
        for it in range(1, config.iterations + 1):
            batch = train_source()
            outputs, tape = model.forward_sequence(batch.inputs)
            train_loss, dout = sequence_loss(outputs, batch)
            if not np.isfinite(train_loss):
                raise RuntimeError(
                    f"training aborted: non-finite loss {train_loss} at iteration {it}")
            grads = model.backward_sequence(tape, dout)
            norm = global_norm(grads)
            if config.clip_norm > 0:
                grads = clip_global_norm(grads, config.clip_norm)
            opt.step(params, grads)
            if it % config.eval_every == 0 or it == config.iterations:
                val_loss = evaluate(model, val_source())
                wall = time.monotonic() - t0 if config.record_wall_time else 0.0
                row = MetricsRow(it, train_loss, val_loss, wall, norm)
                fh.write(row.csv_line() + "\n")
                rows.append(row)

    if config.render_figures:
        from .report import plot_metrics
        plot_metrics([csv_path], os.path.join(
            config.output_dir, metrics_name.replace(".csv", "") + ".png"))
    return rows[-1]


def run_gradcheck(n: int = 4, d: int = 2, k: int = 3, T: int = 10,
                  mode: str = "atn", seed: int = 0, batch: int = 2,
                  stop_window_gradient: bool = False,
                  h: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients to central finite differences.

    Uses a per-step cross-entropy loss over 5 classes on one fixed random
    batch.  Returns the relative error per parameter group: the largest
    analytic/numeric discrepancy in the group, scaled by
    max(|analytic|, |numeric|, 1e-8) over the group.  (Scaling per
    coordinate instead would bump into the finite-difference roundoff
    floor, about eps * |loss| / 2h ~ 1e-11, whenever a single gradient
    entry is tiny.)
    """
    out_classes = 5
    model = init_lstm(n, d, out_classes, mode, k, Rng(seed),
                      output_mode="per_step",
                      stop_window_gradient=stop_window_gradient)
    data_rng = Rng(seed + 1)
    x_seq = data_rng.gaussian(0.0, 1.0, (T, batch, d))
    targets = data_rng.integers(0, out_classes, (T, batch))
    fake = TaskBatch(name="gradcheck", kind="seq_class", inputs=x_seq,
                     targets=targets, loss_mask=np.ones(T),
                     n_classes=out_classes)

    def loss_value() -> float:
        outputs, _ = model.forward_sequence(x_seq)
        loss, _ = sequence_loss(outputs, fake)
        return loss

    outputs, tape = model.forward_sequence(x_seq)
    _, dout = sequence_loss(outputs, fake)
    analytic = model.backward_sequence(tape, dout)

    report: dict[str, float] = {}
    for name, arr in model.trainable_parameters().items():
        flat = arr.ravel()
        aflat = analytic[name].ravel()
        numeric = np.empty_like(aflat)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss_value()
            flat[idx] = orig - h
            minus = loss_value()
            flat[idx] = orig
            numeric[idx] = (plus - minus) / (2.0 * h)
        denom = max(np.abs(aflat).max(), np.abs(numeric).max(), 1e-8)
        report[name] = float(np.abs(aflat - numeric).max() / denom)
    return report


def run_stats(config: TrainConfig, stats_name: str = "stats.json") -> list[dict]:
    """Per-timestep post-normalization statistics on the adding task, T=75.

    Gain/bias are pinned non-trainable at (1, 0), so the post-norm output
    can be reconstructed from the recorded window statistics.  Records one
    {site, t, mean, var} entry per step and site, averaged over the batch,
    and writes them as JSON.
    """
    if config.mode not in ("ln", "atn"):
        raise ConfigError("mode: stats requires mode 'ln' or 'atn'")
    cfg = dataclasses.replace(config, task="add", T=75,
                              gamma_beta_trainable=False)
    cfg.validate()
    model = build_model(cfg, Rng(cfg.seed))
    batch = make_batch_source(cfg, Rng(cfg.seed + 1))()
    _, tape = model.forward_sequence(batch.inputs)

    records = []
    site_tapes = {"hh": tape.tape_hh, "ih": tape.tape_ih, "cell": tape.tape_cell}
    for site, site_tape in site_tapes.items():
        for idx in range(len(site_tape)):
            t = idx + 1
            inv = 1.0 / np.sqrt(site_tape.var[idx] + cfg.epsilon)   # (batch,)
            y = (site_tape.entries[idx] - site_tape.mu[idx][:, None]) * inv[:, None]
            records.append({
                "site": site,
                "t": t,
                "mean": float(y.mean(axis=1).mean()),
                "var": float(y.var(axis=1).mean()),
            })
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, stats_name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if config.render_figures:
        from .report import plot_stats
        plot_stats(path, path.replace(".json", ".png"))
    return records


def run_ksweep(config: TrainConfig, k_list: list[int]) -> list[MetricsRow]:
    """Run the training config once per window length, shared seed."""
    if config.mode != "atn":
        raise ConfigError("mode: ksweep requires mode 'atn'")
    finals = []
    for k in k_list:
        cfg = dataclasses.replace(config, k=k)
        finals.append(run_training(cfg, metrics_name=f"metrics_k{k}.csv"))
    return finals
