"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The training-based criteria (5, 6, 8) share module-scoped fixtures so each
configuration trains exactly once. They are marked ``slow``; deselect with
``-m "not slow"`` during development. Criterion 10 needs MNIST IDX files
under data/mnist (or $ATN_MNIST_DIR) and skips without them.
"""

import os
import statistics

import numpy as np
import pytest

from atn.cells import LstmModel, init_lstm, scale_weights
from atn.harness import (TrainConfig, accuracy, build_model,
                         make_batch_source, run_gradcheck, run_ksweep,
                         run_stats, run_training, sequence_loss)
from atn.norm import (AtnBuffer, AtnTape, NormParams, atn_backward,
                      atn_forward_step, ln_backward, ln_forward)
from atn.numkit import Rng
from atn.optim import make_optimizer
from atn.tasks import copy_baseline, gen_copy


def _report(number: int, label: str, passed: bool, detail: str = ""):
    tag = "PASS" if passed else "FAIL"
    print(f"\n{tag}  criterion {number}: {label}" + (f" ({detail})" if detail else ""))
    assert passed, f"criterion {number}: {label} {detail}"


# ---------------------------------------------------------------------------
# 1. gradient correctness across random configurations
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    rng = Rng(2024)
    worst = 0.0
    for case in range(20):
        mode = ("plain", "ln", "atn")[rng.integers(0, 3)]
        n = rng.integers(2, 9)
        d = rng.integers(1, 5)
        k = rng.integers(1, 6)
        T = rng.integers(3, 13)
        batch = rng.integers(1, 3)
        report = run_gradcheck(n=n, d=d, k=k, T=T, mode=mode,
                               seed=case, batch=batch)
        worst = max(worst, max(report.values()))
    _report(1, "analytic gradients match finite differences", worst < 1e-6,
            f"worst group relative error {worst:.2e} over 20 configs")


# ---------------------------------------------------------------------------
# 2. window length 1 reduces exactly to layer norm
# ---------------------------------------------------------------------------

def test_criterion_2_k1_reduction():
    rng = Rng(7)
    worst = 0.0
    params = NormParams(rng.uniform(0.5, 1.5, (6,)),
                        rng.uniform(-0.5, 0.5, (6,)), 1e-5)
    for _ in range(100):
        a = rng.gaussian(0, 2, (3, 6))
        dy = rng.gaussian(0, 1, (3, 6))
        y_ln, cache = ln_forward(a, params)
        da_ln, dg_ln, db_ln = ln_backward(cache, dy)
        buf, tape = AtnBuffer(1), AtnTape()
        y_w = atn_forward_step(buf, a, params, tape)
        da_w, dg_w, db_w = atn_backward(tape, [dy], params)
        worst = max(worst,
                    np.abs(y_ln - y_w).max(), np.abs(da_ln - da_w[0]).max(),
                    np.abs(dg_ln - dg_w).max(), np.abs(db_ln - db_w).max())
    _report(2, "k=1 equals layer norm (forward and gradients)",
            worst < 1e-12, f"max abs difference {worst:.2e} over 100 inputs")


# ---------------------------------------------------------------------------
# 3. weight-scaling invariance of the normalized cell
# ---------------------------------------------------------------------------

def _trajectory(model, x, h0):
    state = model.init_state(x.shape[1])
    state.h = h0.copy()
    _, tape = model.forward_sequence(x, state)
    return np.stack([rec.h for rec in tape.steps])


def test_criterion_3_weight_scaling_invariance():
    rng = Rng(30)
    model = init_lstm(8, 3, 2, "atn", 4, rng, epsilon=0.0)
    x = np.stack([Rng(31).gaussian(0, 1, (2, 3)) for _ in range(20)])
    h0 = Rng(32).gaussian(0, 1, (2, 8))
    base = _trajectory(model, x, h0)
    worst = 0.0
    for delta in (0.5, 3.0):
        scaled = LstmModel(scale_weights(model.params, delta),
                           model.W_out, model.b_out, model.output_mode)
        diff = np.abs(_trajectory(scaled, x, h0) - base).max()
        worst = max(worst, diff / np.abs(base).max())

    plain = init_lstm(8, 3, 2, "plain", 1, Rng(30))
    p_base = _trajectory(plain, x, h0)
    p_scaled = LstmModel(scale_weights(plain.params, 3.0),
                         plain.W_out, plain.b_out, plain.output_mode)
    witness = np.abs(_trajectory(p_scaled, x, h0) - p_base).max()
    _report(3, "recurrent-weight scaling leaves the normalized trajectory "
               "unchanged", worst < 1e-9 and witness > 1e-2,
            f"normalized rel diff {worst:.2e}, plain witness {witness:.2e}")


# ---------------------------------------------------------------------------
# 4. scaling a single step is seen by the window but not by layer norm
# ---------------------------------------------------------------------------

def test_criterion_4_single_step_non_invariance():
    rng = Rng(40)
    params = NormParams.create(6, epsilon=0.0)
    a_seq = [rng.gaussian(0, 1, (2, 6)) for _ in range(5)]

    def last_output(seq, k):
        buf, tape = AtnBuffer(k), AtnTape()
        for a in seq:
            y = atn_forward_step(buf, a, params, tape)
        return y

    doubled = a_seq[:-1] + [2.0 * a_seq[-1]]
    atn_diff = np.linalg.norm(last_output(doubled, 3) - last_output(a_seq, 3))
    ln_diff = np.abs(last_output(doubled, 1) - last_output(a_seq, 1)).max()
    _report(4, "doubling one step moves the windowed output but not layer "
               "norm's", atn_diff > 1e-3 and ln_diff < 1e-10,
            f"window diff {atn_diff:.2e}, per-step diff {ln_diff:.2e}")


# ---------------------------------------------------------------------------
# training fixtures shared by criteria 5, 6, 8
# ---------------------------------------------------------------------------

COPY_T = 50
COPY_BASE = dict(task="copy", T=COPY_T, hidden_n=40, batch=32,
                 optimizer="rmsprop", lr=1e-3, iterations=1500,
                 eval_every=500)
SEEDS = (1, 2, 3)


def _train(tmp, tag, **kw):
    cfg = TrainConfig(output_dir=str(tmp / tag), **kw)
    return run_training(cfg).val_loss


@pytest.fixture(scope="module")
def copy_runs(tmp_path_factory):
    """Final validation losses on copy T=50: plain, ln and atn per seed."""
    tmp = tmp_path_factory.mktemp("copy_runs")
    runs = {"plain": _train(tmp, "plain", mode="plain", seed=1, **COPY_BASE)}
    for mode, k in (("ln", 1), ("atn", 45)):
        runs[mode] = [_train(tmp, f"{mode}_s{s}", mode=mode, k=k, seed=s,
                             **COPY_BASE) for s in SEEDS]
    return runs


@pytest.mark.slow
def test_criterion_5_copy_baseline(tmp_path):
    baseline = copy_baseline(100)
    # memory-free reference: certain blank off-answer, uniform digits at
    # the recall steps; hits the analytic baseline exactly in expectation
    batch = gen_copy(100, 256, Rng(5))
    logits = np.full((batch.T, 256, 10), -1e3)
    logits[:, :, 0] = 0.0
    recall = np.flatnonzero(batch.answer_mask)
    logits[recall] = 0.0
    logits[recall, :, 9] = -1e3  # the marker class never appears as a digit
    logits[recall, :, 0] = -1e3
    ref_loss, _ = sequence_loss(logits, batch)

    cfg = TrainConfig(task="copy", T=100, mode="plain", hidden_n=40, batch=32,
                      optimizer="rmsprop", lr=1e-3, seed=1, iterations=2500,
                      eval_every=500, output_dir=str(tmp_path))
    trained = run_training(cfg).val_loss
    ok = (abs(ref_loss - baseline) / baseline < 0.05
          and abs(trained - baseline) / baseline < 0.05
          and float(f"{trained:.2g}") == float(f"{0.1739:.2g}"))
    _report(5, "memory-free reference and trained plain LSTM sit on the "
               "copy baseline", ok,
            f"baseline {baseline:.5f}, reference {ref_loss:.5f}, "
            f"trained plateau {trained:.5f}")


@pytest.mark.slow
def test_criterion_6_ordering(copy_runs, tmp_path):
    base = copy_baseline(COPY_T)
    ln_med = statistics.median(copy_runs["ln"])
    atn_med = statistics.median(copy_runs["atn"])
    cfg = TrainConfig(task="add", T=100, mode="atn", k=25, hidden_n=40,
                      batch=32, optimizer="rmsprop", lr=1e-3, seed=1,
                      iterations=2000, eval_every=500,
                      output_dir=str(tmp_path))
    add_final = run_training(cfg).val_loss
    ok = (atn_med < ln_med and atn_med < base
          and add_final < 1e-2 and add_final < 1.0 / 6.0)
    _report(6, "windowed norm beats layer norm and the task baselines", ok,
            f"copy medians atn {atn_med:.4f} < ln {ln_med:.4f}, "
            f"baseline {base:.4f}; adding final {add_final:.2e}")


# ---------------------------------------------------------------------------
# 7. post-normalization statistics
# ---------------------------------------------------------------------------

def test_criterion_7_post_norm_statistics(tmp_path):
    # layer norm: per-step output mean 0 and variance var/(var+eps) exactly
    cfg = TrainConfig(task="add", T=75, mode="ln", k=1, hidden_n=20,
                      batch=16, gamma_beta_trainable=False, seed=0,
                      output_dir=str(tmp_path / "ln"))
    model = build_model(cfg, Rng(0))
    batch = make_batch_source(cfg, Rng(1))()
    _, tape = model.forward_sequence(batch.inputs)
    ln_ok = True
    for site_tape in (tape.tape_hh, tape.tape_ih, tape.tape_cell):
        for idx in range(len(site_tape)):
            a = site_tape.entries[idx]
            var = site_tape.var[idx]
            y = (a - site_tape.mu[idx][:, None]) / np.sqrt(
                var[:, None] + cfg.epsilon)
            expect = var / (var + cfg.epsilon)
            ln_ok = ln_ok and np.abs(y.mean(axis=1)).max() < 1e-10
            ln_ok = ln_ok and np.abs(y.var(axis=1) - expect).max() < 1e-6

    # windowed: per-step means vary with time; short windows settle early
    cell = {}
    for k in (5, 25, 55):
        cfg_k = TrainConfig(task="add", T=75, mode="atn", k=k, hidden_n=20,
                            batch=16, seed=0,
                            output_dir=str(tmp_path / f"atn{k}"))
        recs = run_stats(cfg_k)
        for site in ("hh", "ih", "cell"):
            means = np.array([r["mean"] for r in recs if r["site"] == site])
            if site == "cell":
                cell[k] = means
            if means.std() <= 0.01:
                _report(7, "post-normalization statistics", False,
                        f"k={k} {site} cross-time std {means.std():.4f}")

    def dist40(means):
        return abs(means[39] - means[-10:].mean())

    decay_ok = dist40(cell[5]) < 0.02 and dist40(cell[55]) > 0.02
    _report(7, "layer norm statistics are flat, windowed statistics vary "
               "and settle with the window length", ln_ok and decay_ok,
            f"k=5 |m(40)-late| {dist40(cell[5]):.4f}, "
            f"k=55 {dist40(cell[55]):.4f}")


@pytest.mark.slow
def test_criterion_8_window_sweep(copy_runs, tmp_path):
    plateau = copy_runs["plain"]
    cfg = TrainConfig(mode="atn", seed=3, output_dir=str(tmp_path),
                      **COPY_BASE)
    finals = run_ksweep(cfg, [25, 45])
    losses = {25: finals[0].val_loss, 45: finals[1].val_loss}
    worst = max(losses.values())
    extra = max(copy_runs["atn"])
    ok = worst < plateau and extra < plateau
    _report(8, "every windowed run ends below the plain LSTM plateau", ok,
            f"plain plateau {plateau:.4f}, k=25 {losses[25]:.4f}, "
            f"k=45 {losses[45]:.4f}")


# ---------------------------------------------------------------------------
# 9. byte-level determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    files = []
    for sub in ("a", "b"):
        cfg = TrainConfig(task="copy", T=20, mode="atn", k=5, hidden_n=12,
                          batch=8, optimizer="adam", lr=1e-3, seed=11,
                          iterations=6, eval_every=2,
                          output_dir=str(tmp_path / sub))
        run_training(cfg)
        run_stats(TrainConfig(task="add", mode="atn", k=5, hidden_n=12,
                              batch=8, seed=11,
                              output_dir=str(tmp_path / sub)))
        files.append(((tmp_path / sub / "metrics.csv").read_bytes(),
                      (tmp_path / sub / "stats.json").read_bytes()))
    ok = files[0] == files[1]
    _report(9, "identical config and seed give byte-identical artifacts", ok)


# ---------------------------------------------------------------------------
# 10. noisy pixel-level MNIST (non-blocking, needs local data)
# ---------------------------------------------------------------------------

def _mnist_dir():
    d = os.environ.get("ATN_MNIST_DIR", "data/mnist")
    for name in ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"):
        if os.path.exists(os.path.join(d, name)):
            return d
    return None


@pytest.mark.slow
@pytest.mark.flaky
def test_criterion_10_noisy_pixel_mnist(tmp_path):
    directory = _mnist_dir()
    if directory is None:
        pytest.skip("MNIST IDX files not found (set ATN_MNIST_DIR); "
                    "criterion 10 is non-blocking")
    results = {}
    for mode, k in (("ln", 1), ("atn", 10)):
        cfg = TrainConfig(task="mnist-pixel", mode=mode, k=k, hidden_n=64,
                          batch=32, optimizer="adam", lr=1e-3, clip_norm=3.0,
                          epsilon=1.0, noise_var=0.1, seed=1, iterations=300,
                          eval_every=100, mnist_dir=directory,
                          output_dir=str(tmp_path / mode))
        model = build_model(cfg, Rng(cfg.seed))
        train = make_batch_source(cfg, Rng(cfg.seed + 1), train=True)
        opt = make_optimizer(cfg.optimizer, cfg.lr)
        params = model.trainable_parameters()
        from atn.optim import clip_global_norm
        for _ in range(cfg.iterations):
            b = train()
            out, tape = model.forward_sequence(b.inputs)
            _, dout = sequence_loss(out, b)
            grads = clip_global_norm(model.backward_sequence(tape, dout),
                                     cfg.clip_norm)
            opt.step(params, grads)
        test_src = make_batch_source(cfg, Rng(cfg.seed + 2), train=False)
        accs = []
        for _ in range(10):
            b = test_src()
            out, _ = model.forward_sequence(b.inputs)
            accs.append(accuracy(out, b))
        results[mode] = float(np.mean(accs))
    ok = results["ln"] < 0.15 and results["atn"] > 0.30
    _report(10, "with the stabilizer at 1, layer norm stays at chance while "
                "the windowed model learns", ok,
            f"ln accuracy {results['ln']:.3f}, atn accuracy {results['atn']:.3f}")
