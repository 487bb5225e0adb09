"""Exit-gate suite: one printed pass/fail line per criterion.

The desk experiment behind criteria 4-7: four Gaussian blob classes in eight
dimensions (spread 1.3), a 64x64 MLP teacher, 3-bit quantization, and the
generator-vs-student game run for 4000 iterations with calibration lr 1e-3.
Lines are written straight to the real stdout so they survive capture.
"""

import hashlib
import json
import os
import sys

import numpy as np
import pytest

from conftest import argmin_entropy_row, fd_check_skip_rows

from adadfq.adaptability import (
    GameHyperparams,
    calibration_objective,
    disagreement_vector,
    generator_objective,
    info_entropy,
    loss_as,
    loss_bal,
    loss_bns,
    loss_ds,
    margin_terms,
    normalize_entropy,
)
from adadfq.cli import RunConfig, evaluate_network, main, train_teacher_network
from adadfq.data import (
    SeededRng,
    apply_standardization,
    make_blobs,
    standardize,
)
from adadfq.game import GameConfig, run_game
from adadfq.nn import BatchNormLayer, ConditionalGenerator
from adadfq.quant import (
    QuantSpec,
    build_quantized_student,
    dequantize_array,
    quantize_array,
    quantize_value,
)
from adadfq.tensor import Tensor, check_gradients, softmax

SEEDS = (0, 1, 2)
BITS = 3
GAME_KW = dict(epochs=80, iterations_per_epoch=50, cal_lr=1e-3)


def emit(num, name, ok, detail=""):
    line = f"criterion {num} [{name}]: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    # leading newline so the line starts at column 0 even under pytest -v,
    # which leaves the test-name line unterminated while the test runs
    print("\n" + line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared desk experiment
# ---------------------------------------------------------------------------


def _train_desk_teacher(seed):
    cfg = RunConfig(seed=seed)
    train_raw, test_raw = make_blobs(cfg.classes, cfg.per_class, cfg.dim,
                                     cfg.spread, seed)
    train, stats = standardize(train_raw)
    test = apply_standardization(test_raw, stats)
    net, _ = train_teacher_network(train, cfg)
    return net, train, test


def _naive_student(teacher, test):
    q = build_quantized_student(teacher, QuantSpec(bits=BITS))
    q.train()
    for start in range(0, test.num_samples, 256):
        q.forward(Tensor(test.features[start:start + 256]))
    q.eval()
    return q


def _play(teacher, seed, hyper=None, **kw):
    config_kw = dict(GAME_KW, seed=seed, bits=BITS)
    config_kw.update(kw)
    if hyper is not None:
        config_kw["hyper"] = hyper
    config = GameConfig(**config_kw)
    rng = SeededRng(seed)
    g = ConditionalGenerator(config.noise_dim, teacher.output_dim,
                             teacher.input_dim, rng.substream("generator_init"))
    q = build_quantized_student(teacher, QuantSpec(bits=BITS))
    trace = run_game(g, teacher, q, config)
    q.eval()
    return trace, q


@pytest.fixture(scope="module")
def desk():
    """Per-seed teacher/naive/calibrated accuracies plus ablation variants."""
    variants = {
        "full": GameHyperparams(),
        "no_lambda": GameHyperparams(lambda_l=0.0, lambda_u=1.0),
        "no_ds": GameHyperparams(alpha_ds=0.0),
        "no_as": GameHyperparams(alpha_as=0.0),
    }
    out = {"teacher_acc": {}, "naive_acc": {}, "acc": {k: {} for k in variants},
           "trace": {}}
    for seed in SEEDS:
        teacher, _, test = _train_desk_teacher(seed)
        out["teacher_acc"][seed] = evaluate_network(teacher, test)["accuracy"]
        out["naive_acc"][seed] = evaluate_network(_naive_student(teacher, test),
                                                  test)["accuracy"]
        for name, hyper in variants.items():
            trace, student = _play(teacher, seed, hyper=hyper)
            out["acc"][name][seed] = evaluate_network(student, test)["accuracy"]
            if name == "full":
                out["trace"][seed] = trace
    return out


# ---------------------------------------------------------------------------
# 1. quantizer exactness
# ---------------------------------------------------------------------------


def test_criterion_1_quantizer_exactness():
    rng = np.random.default_rng(0)
    ok = True
    detail = []
    for bits in (2, 3, 4, 8):
        lo_code, hi_code = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
        t_min, t_max = -1.5, 2.5
        # boundary codes exact
        ok &= quantize_value(t_min, t_min, t_max, bits) == lo_code
        ok &= quantize_value(t_max, t_min, t_max, bits) == hi_code
        # dequantized boundaries within 1e-12
        ok &= abs(dequantize_array(np.array([lo_code]), t_min, t_max, bits)[0]
                  - t_min) <= 1e-12
        ok &= abs(dequantize_array(np.array([hi_code]), t_min, t_max, bits)[0]
                  - t_max) <= 1e-12
        # exhaustive round trip on every code
        codes = np.arange(lo_code, hi_code + 1)
        ok &= np.array_equal(
            quantize_array(dequantize_array(codes, t_min, t_max, bits),
                           t_min, t_max, bits), codes)
        # monotone on random input
        vals = np.sort(rng.uniform(t_min - 1, t_max + 1, 500))
        q = quantize_array(vals, t_min, t_max, bits)
        ok &= bool(np.all(np.diff(q) >= 0))
        # half-step error bound inside the range
        x = rng.uniform(t_min, t_max, 2000)
        x_hat = dequantize_array(quantize_array(x, t_min, t_max, bits),
                                 t_min, t_max, bits)
        step = (t_max - t_min) / (2**bits - 1)
        worst = np.abs(x - x_hat).max()
        ok &= worst <= step / 2 + 1e-12
        detail.append(f"n={bits} worst={worst:.2e}")
    emit(1, "quantizer exactness", bool(ok), "; ".join(detail))


# ---------------------------------------------------------------------------
# 2. entropy and normalization properties
# ---------------------------------------------------------------------------


def test_criterion_2_entropy_normalization():
    rng = np.random.default_rng(1)
    ok = True
    # bounds on random distributions
    for c in (2, 4, 8):
        p = softmax(Tensor(rng.normal(scale=3.0, size=(50, c))))
        h = info_entropy(p).data
        ok &= bool(np.all(h >= -1e-12) and np.all(h <= np.log(c) + 1e-9))
        # uniform row hits ln C within 1e-9
        hu = float(info_entropy(Tensor(np.full((1, c), 1.0 / c))).data[0])
        ok &= abs(hu - np.log(c)) <= 1e-9
        # one-hot row gives exactly zero
        one_hot = np.zeros((1, c))
        one_hot[0, 0] = 1.0
        ok &= float(info_entropy(Tensor(one_hot)).data[0]) == 0.0
    # closed endpoint: the batch-min sample maps to exactly zero
    h = Tensor(rng.uniform(0.1, 1.2, size=12))
    hp = normalize_entropy(h, 4).data
    ok &= float(hp.min()) == 0.0 and bool(np.all(hp <= 1.0 + 1e-12))
    # base invariance within 1e-9
    h_nat = info_entropy(softmax(Tensor(rng.normal(size=(16, 4)))))
    a = normalize_entropy(h_nat, 4).data
    h_bits = h_nat.data / np.log(2.0)
    b = (h_bits - h_bits.min()) / (np.log2(4.0) - h_bits.min())
    ok &= bool(np.max(np.abs(a - b)) <= 1e-9)
    emit(2, "entropy/normalization properties", bool(ok))


# ---------------------------------------------------------------------------
# 3. gradient suite
# ---------------------------------------------------------------------------


def _margin_safe(h_prime, step, margin=(0.1, 0.8)):
    d = np.minimum(np.abs(h_prime - margin[0]), np.abs(h_prime - margin[1]))
    return d > 50 * step


def test_criterion_3_gradient_suite():
    worst = 0.0
    step = 1e-6
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = Tensor(np.eye(4)[rng.integers(0, 4, 6)])
        z_p = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        z_q = Tensor(rng.normal(size=(6, 4)), requires_grad=True)

        worst = max(worst, check_gradients(
            lambda: loss_ds(z_p, z_q, y), [z_p, z_q], step=step))
        worst = max(worst, check_gradients(
            lambda: loss_as(z_p, z_q, y), [z_p, z_q], step=step))
        worst = max(worst, check_gradients(
            lambda: loss_bal(loss_ds(z_p, z_q, y), loss_as(z_p, z_q, y),
                             0.2, 0.1), [z_p, z_q], step=step))

        # margin terms away from the two hinge kinks
        h_raw = rng.uniform(0.0, 1.0, size=8)
        h_raw = h_raw[_margin_safe(h_raw, step)]
        h = Tensor(h_raw, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: margin_terms(h, 0.1, 0.8), [h], step=step))

        # BN statistics loss
        layer = BatchNormLayer(4)
        layer.running_mean = rng.normal(size=4)
        layer.running_var = rng.uniform(0.5, 2.0, size=4)
        x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: loss_bns([x], [layer]), [x], step=step))

        # both full objectives, differentiated through a shared input batch;
        # skip the batch-min row (its entropy is treated as a constant) and
        # rows whose h' sits on a hinge kink
        w_p = rng.normal(size=(4, 4))
        w_q = rng.normal(size=(4, 4))
        x2 = Tensor(rng.normal(size=(6, 4)), requires_grad=True)

        def gen_loss():
            zp = x2 @ Tensor(w_p)
            zq = x2 @ Tensor(w_q)
            return generator_objective(zp, zq, Tensor(np.eye(4)[np.arange(6) % 4]),
                                       [x2], [layer], GameHyperparams(), 4)

        def cal_loss():
            return calibration_objective(x2 @ Tensor(w_p), x2 @ Tensor(w_q), 4)

        zp0, zq0 = x2.data @ w_p, x2.data @ w_q
        h_prime = normalize_entropy(
            info_entropy(disagreement_vector(Tensor(zp0), Tensor(zq0))), 4).data
        skip = {argmin_entropy_row(Tensor(zp0), Tensor(zq0))}
        skip |= set(np.flatnonzero(~_margin_safe(h_prime, step)))
        worst = max(worst, fd_check_skip_rows(gen_loss, x2, skip, step=step))
        worst = max(worst, fd_check_skip_rows(cal_loss, x2, skip, step=step))

    emit(3, "gradient suite", worst < 1e-4, f"worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. zero-sum trajectory
# ---------------------------------------------------------------------------


def test_criterion_4_zero_sum_trajectory(desk):
    # The desk experiment runs three seeds; pool their final quarters so the
    # gain-cancellation statistic is computed over the whole experiment.
    ratios, all_dg, all_dq = [], [], []
    for seed in SEEDS:
        trace = desk["trace"][seed]
        rows = trace[-(len(trace) // 4):]
        dg = np.array([r.delta_g for r in rows])
        dq = np.array([r.delta_q for r in rows])
        all_dg.append(dg)
        all_dq.append(dq)
        ratios.append(abs((dg + dq).mean()) / np.abs(dg).mean())
    dg = np.concatenate(all_dg)
    dq = np.concatenate(all_dq)
    pooled = abs((dg + dq).mean()) / np.abs(dg).mean()
    ok = pooled < 0.25 and min(desk["teacher_acc"].values()) >= 0.95
    emit(4, "zero-sum trajectory", bool(ok),
         f"|mean(dG+dQ)| / mean|dG| = {pooled:.3f} (< 0.25); "
         f"per seed {['%.3f' % r for r in ratios]}")


# ---------------------------------------------------------------------------
# 5. recovery experiment
# ---------------------------------------------------------------------------


def test_criterion_5_recovery(desk):
    drops, recoveries = [], []
    for seed in SEEDS:
        t, n = desk["teacher_acc"][seed], desk["naive_acc"][seed]
        c = desk["acc"]["full"][seed]
        drops.append(t - n)
        recoveries.append((c - n) / (t - n))
    mean_rec = float(np.mean(recoveries))
    ok = (min(desk["teacher_acc"].values()) >= 0.95
          and min(drops) >= 0.05
          and mean_rec >= 0.5)
    emit(5, "recovery experiment", bool(ok),
         f"teacher {['%.3f' % desk['teacher_acc'][s] for s in SEEDS]}, "
         f"drop {['%.1f' % (100 * d) for d in drops]} pts, "
         f"mean recovery {mean_rec:.2f} (>= 0.50)")


# ---------------------------------------------------------------------------
# 6. ablation directions
# ---------------------------------------------------------------------------


def test_criterion_6_ablation_directions(desk):
    means = {name: float(np.mean(list(per_seed.values())))
             for name, per_seed in desk["acc"].items()}
    full = means["full"]
    ok = all(means[v] <= full for v in ("no_lambda", "no_ds", "no_as"))
    emit(6, "ablation directions", bool(ok),
         ", ".join(f"{k} {v:.4f}" for k, v in means.items()))


# ---------------------------------------------------------------------------
# 7. margin behavior
# ---------------------------------------------------------------------------


def test_criterion_7_margin_behavior():
    # short run whose first quarter straddles the early transient where the
    # hinges pull samples inside the margins
    teacher, _, _ = _train_desk_teacher(0)
    trace, _ = _play(teacher, 0, epochs=8)
    quarter = len(trace) // 4
    first = float(np.mean([r.hprime_frac_in for r in trace[:quarter]]))
    last = float(np.mean([r.hprime_frac_in for r in trace[-quarter:]]))
    emit(7, "margin behavior", last > first,
         f"fraction inside [0.1, 0.8]: first quarter {first:.3f} -> "
         f"final quarter {last:.3f}")


# ---------------------------------------------------------------------------
# 8. data-free guarantee
# ---------------------------------------------------------------------------

SHORT_CONFIG = """
classes = 3
per_class = 40
dim = 4
spread = 1.3
teacher_hidden = 16,16
teacher_epochs = 20
gen_hidden = 16,16
epochs = 2
iterations_per_epoch = 5
batch_size = 8
noise_dim = 16
cal_lr = 0.001
sample_dump = 8
"""


def _hash_dir(d):
    return {f: hashlib.sha256((d / f).read_bytes()).hexdigest()
            for f in sorted(os.listdir(d))}


def _run_cli(args):
    rc = main(args)
    assert rc == 0, f"command failed ({rc}): {args}"


def test_criterion_8_data_free(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SHORT_CONFIG)
    teacher_dir = tmp_path / "teacher"
    _run_cli(["train-teacher", "--config", str(cfg), "--seed", "0",
              "--out-dir", str(teacher_dir)])

    # run dfq with the dataset files present
    _run_cli(["dfq", "--ckpt", str(teacher_dir / "teacher.json"),
              "--config", str(cfg), "--seed", "0",
              "--out-dir", str(tmp_path / "with_data")])

    # delete every dataset file, run again: outputs must be identical
    os.remove(teacher_dir / "train.csv")
    os.remove(teacher_dir / "test.csv")
    _run_cli(["dfq", "--ckpt", str(teacher_dir / "teacher.json"),
              "--config", str(cfg), "--seed", "0",
              "--out-dir", str(tmp_path / "without_data")])

    same = _hash_dir(tmp_path / "with_data") == _hash_dir(tmp_path / "without_data")
    emit(8, "data-free guarantee", same,
         "dfq outputs identical with dataset files deleted")


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SHORT_CONFIG)

    def pipeline(tag):
        base = tmp_path / tag
        t = base / "teacher"
        _run_cli(["train-teacher", "--config", str(cfg), "--seed", "1",
                  "--out-dir", str(t)])
        _run_cli(["quantize", "--ckpt", str(t / "teacher.json"), "--bits", "3",
                  "--dataset", str(t / "test.csv"), "--out-dir", str(base / "q")])
        _run_cli(["dfq", "--ckpt", str(t / "teacher.json"), "--config", str(cfg),
                  "--seed", "1", "--out-dir", str(base / "dfq")])
        _run_cli(["eval", "--ckpt", str(base / "dfq" / "student_dfq_3bit.json"),
                  "--dataset", str(t / "test.csv"),
                  "--out", str(base / "eval.json")])
        _run_cli(["report-similarity", "--samples", str(base / "dfq" / "samples.csv"),
                  "--ckpt", str(t / "teacher.json"),
                  "--student-ckpt", str(base / "dfq" / "student_dfq_3bit.json"),
                  "--out", str(base / "sim.csv")])
        hashes = {}
        for sub in ("teacher", "q", "dfq"):
            for name, digest in _hash_dir(base / sub).items():
                hashes[f"{sub}/{name}"] = digest
        for name in ("eval.json", "sim.csv"):
            hashes[name] = hashlib.sha256((base / name).read_bytes()).hexdigest()
        return hashes

    ok = pipeline("a") == pipeline("b")
    emit(9, "determinism", ok,
         "all five commands hash-identical across two runs")
