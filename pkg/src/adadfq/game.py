"""The alternating zero-sum optimization loop and its trajectory metrics.

Each iteration plays two half-steps. (a) With the student fixed, the
generator takes one ascent step on its objective over a fresh (noise, label)
batch. (b) With the updated generator frozen, the student takes one descent
step on the calibration loss over a second fresh batch; reusing the
generator's batch would couple the two objectives' expectations, so each
player gets its own draw. The teacher is never touched.

The trajectory gains are measured on unnormalized disagreement entropy
H_info(p_ds): delta_g is the change in the batch mean across the generator's
parameter update (re-evaluated on the same batch (a)), delta_q the change
across the student's update on batch (b). Near equilibrium the two roughly
cancel. Measurement forwards run in eval mode and mutate nothing; each pre
measurement is taken after the training forward (which folds the batch into
BN running statistics or activation-range EMAs) and immediately before the
optimizer step, so a delta reflects the parameter update alone and a zero
learning rate yields a delta of exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .adaptability import (
    GameHyperparams,
    calibration_objective,
    classify_samples,
    cross_entropy_from_logits,
    disagreement_vector,
    generator_objective,
    info_entropy,
    normalize_entropy,
)
from .data import SeededRng, sample_noise_and_labels
from .errors import ContractError, NumericError
from .nn import AdamOptimizer, ConditionalGenerator, MlpNetwork, SgdMomentum
from .quant import QuantizedMlp
from .tensor import Tensor, backward, zero_grads

TRACE_FIELDS = [
    "iter", "epoch", "loss_gen", "loss_cal",
    "h_info_pre_g", "h_info_post_g", "delta_g",
    "h_info_pre_q", "h_info_post_q", "delta_q",
    "n_disagree", "n_agree", "n_teacher_wrong",
    "hprime_min", "hprime_mean", "hprime_max", "hprime_frac_in",
]


@dataclass
class GameConfig:
    epochs: int = 400
    iterations_per_epoch: int = 50
    batch_size: int = 16
    noise_dim: int = 64
    gen_lr: float = 1e-3
    gen_betas: tuple[float, float] = (0.9, 0.999)
    cal_lr: float = 1e-4
    cal_momentum: float = 0.9
    cal_weight_decay: float = 1e-4
    hyper: GameHyperparams = field(default_factory=GameHyperparams)
    seed: int = 0
    bits: int = 3
    aux_ce_weight: float = 0.0  # optional label cross-entropy during calibration

    def __post_init__(self):
        if self.epochs < 1 or self.iterations_per_epoch < 1 or self.batch_size < 2:
            raise ContractError("epochs/iterations must be >= 1 and batch_size >= 2")


@dataclass
class TraceRow:
    iter: int
    epoch: int
    loss_gen: float
    loss_cal: float
    h_info_pre_g: float
    h_info_post_g: float
    delta_g: float
    h_info_pre_q: float
    h_info_post_q: float
    delta_q: float
    n_disagree: int
    n_agree: int
    n_teacher_wrong: int
    hprime_min: float
    hprime_mean: float
    hprime_max: float
    hprime_frac_in: float  # fraction of the batch inside [lambda_l, lambda_u]

    def as_dict(self):
        return asdict(self)


def _mean_disagreement_entropy(g: ConditionalGenerator, p: MlpNetwork,
                               q: QuantizedMlp, z: Tensor, y: Tensor) -> float:
    """Batch-mean H_info(p_ds) with every network in eval mode; mutates nothing."""
    x = Tensor(g.forward(z, y).data)
    z_p = p.forward(x)
    z_q = q.forward(x)
    h = info_entropy(disagreement_vector(z_p, z_q))
    return float(h.data.mean())


def game_iteration(g: ConditionalGenerator, p: MlpNetwork, q: QuantizedMlp,
                   gen_opt: AdamOptimizer, cal_opt: SgdMomentum,
                   config: GameConfig, rng: SeededRng, iteration: int) -> TraceRow:
    """One generator ascent step plus one student calibration step."""
    num_classes = p.output_dim
    hp = config.hyper

    # ---- (a) generator step ------------------------------------------------
    z1, y1 = sample_noise_and_labels(rng, config.batch_size, config.noise_dim, num_classes)

    q.eval()
    p.eval()
    g.train()
    x = g.forward(z1, y1)
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite generated samples at iteration {iteration}")
    z_p = p.forward(x)
    z_q = q.forward(x)  # student params fixed; gradient still flows through x
    score = generator_objective(z_p, z_q, y1, p.bn_inputs, p.bn_layers(), hp, num_classes)
    gen_loss = -score
    if not np.isfinite(gen_loss.data):
        raise NumericError(
            f"non-finite generator loss at iteration {iteration}: {float(gen_loss.data)}"
        )

    # The pre/post pair brackets only the optimizer step: the training forward
    # above has already folded this batch into the generator's running
    # statistics, so the difference below is purely the parameter update (and
    # is exactly zero at a zero learning rate).
    g.eval()
    h_pre_g = _mean_disagreement_entropy(g, p, q, z1, y1)
    zero_grads(g.parameters())
    backward(gen_loss)
    gen_opt.step()
    h_post_g = _mean_disagreement_entropy(g, p, q, z1, y1)

    # per-sample diagnostics from the training batch, before the student moves
    h_prime = normalize_entropy(info_entropy(disagreement_vector(z_p, z_q)), num_classes)
    kinds = classify_samples(z_p.data, z_q.data, y1.data)

    # ---- (b) student calibration step --------------------------------------
    z2, y2 = sample_noise_and_labels(rng, config.batch_size, config.noise_dim, num_classes)
    x2 = Tensor(g.forward(z2, y2).data)  # generator frozen: sample is a constant
    if not np.all(np.isfinite(x2.data)):
        raise NumericError(f"non-finite generated samples at iteration {iteration}")

    q.train()
    z_p2 = p.forward(x2)
    z_q2 = q.forward(x2)  # observes this batch into the activation-range EMAs
    cal_loss = calibration_objective(z_p2, z_q2, num_classes)
    if config.aux_ce_weight != 0.0:
        cal_loss = cal_loss + config.aux_ce_weight * cross_entropy_from_logits(z_q2, y2)
    if not np.isfinite(cal_loss.data):
        raise NumericError(
            f"non-finite calibration loss at iteration {iteration}: {float(cal_loss.data)}"
        )

    # As above: ranges are already observed, so the pair isolates the descent
    # step on the latent weights.
    q.eval()
    h_pre_q = _mean_disagreement_entropy(g, p, q, z2, y2)
    zero_grads(q.parameters())
    backward(cal_loss)
    cal_opt.step()
    h_post_q = _mean_disagreement_entropy(g, p, q, z2, y2)

    return TraceRow(
        iter=iteration,
        epoch=iteration // config.iterations_per_epoch,
        loss_gen=float(gen_loss.data),
        loss_cal=float(cal_loss.data),
        h_info_pre_g=h_pre_g,
        h_info_post_g=h_post_g,
        delta_g=h_post_g - h_pre_g,
        h_info_pre_q=h_pre_q,
        h_info_post_q=h_post_q,
        delta_q=h_post_q - h_pre_q,
        n_disagree=kinds.count("disagreement"),
        n_agree=kinds.count("agreement"),
        n_teacher_wrong=kinds.count("teacher_wrong"),
        hprime_min=float(h_prime.data.min()),
        hprime_mean=float(h_prime.data.mean()),
        hprime_max=float(h_prime.data.max()),
        hprime_frac_in=float(
            ((h_prime.data >= hp.lambda_l) & (h_prime.data <= hp.lambda_u)).mean()
        ),
    )


def run_game(g: ConditionalGenerator, p: MlpNetwork, q: QuantizedMlp,
             config: GameConfig, row_callback=None) -> list[TraceRow]:
    """Run the full alternation; deterministic given the config seed.

    ``row_callback``, when given, receives each TraceRow as it is produced so
    long runs can stream their trace to disk.
    """
    rng = SeededRng(config.seed)
    gen_opt = AdamOptimizer(g.parameters(), lr=config.gen_lr, betas=config.gen_betas)
    cal_opt = SgdMomentum(q.parameters(), lr=config.cal_lr,
                          momentum=config.cal_momentum,
                          weight_decay=config.cal_weight_decay, nesterov=True)
    p.eval()
    trace: list[TraceRow] = []
    total = config.epochs * config.iterations_per_epoch
    for i in range(total):
        row = game_iteration(g, p, q, gen_opt, cal_opt, config, rng, i)
        trace.append(row)
        if row_callback is not None:
            row_callback(row)
    return trace


@dataclass
class EquilibriumReport:
    window: int
    mean_delta_g: float
    mean_delta_q: float
    mean_delta_sum: float
    mean_abs_delta_g: float
    equilibrium: bool
    hprime_min: float
    hprime_mean: float
    hprime_max: float
    hprime_frac_in: float  # fraction of the batch inside [lambda_l, lambda_u]
    underfit: bool
    overfit: bool

    def as_dict(self):
        return asdict(self)


def equilibrium_report(trace: list[TraceRow], window: int,
                       heldout_accuracy: list[float] | None = None) -> EquilibriumReport:
    """Windowed summary over the last ``window`` iterations.

    The equilibrium flag checks that the generator's and student's entropy
    gains cancel: |mean(delta_g + delta_q)| < 0.25 * mean(|delta_g|).
    Underfit: the calibration loss stays high (> 0.5) and flat across the
    window. Overfit: the generator loss has collapsed toward its floor while
    a supplied held-out accuracy series degrades; without that series the
    flag stays off.
    """
    if not trace:
        raise ContractError("equilibrium_report needs a non-empty trace")
    if window > len(trace) or window < 1:
        raise ContractError(f"window {window} out of range for trace of {len(trace)}")
    rows = trace[-window:]
    dg = np.array([r.delta_g for r in rows])
    dq = np.array([r.delta_q for r in rows])
    cal = np.array([r.loss_cal for r in rows])
    gen = np.array([r.loss_gen for r in rows])
    hprime = np.array([[r.hprime_min, r.hprime_mean, r.hprime_max] for r in rows])
    frac_in = float(np.mean([r.hprime_frac_in for r in rows]))

    mean_abs_dg = float(np.abs(dg).mean())
    mean_sum = float((dg + dq).mean())
    equilibrium = abs(mean_sum) < 0.25 * mean_abs_dg if mean_abs_dg > 0 else True

    half = max(1, window // 2)
    flat = abs(float(cal[:half].mean()) - float(cal[half:].mean())) < 0.05
    underfit = bool(float(cal.mean()) > 0.5 and flat)

    overfit = False
    if heldout_accuracy is not None and len(heldout_accuracy) >= 2:
        gen_collapsed = float(np.abs(gen).mean()) < 1e-3
        acc_degrading = heldout_accuracy[-1] < max(heldout_accuracy) - 0.01
        overfit = bool(gen_collapsed and acc_degrading)

    return EquilibriumReport(
        window=window,
        mean_delta_g=float(dg.mean()),
        mean_delta_q=float(dq.mean()),
        mean_delta_sum=mean_sum,
        mean_abs_delta_g=mean_abs_dg,
        equilibrium=equilibrium,
        hprime_min=float(hprime[:, 0].min()),
        hprime_mean=float(hprime[:, 1].mean()),
        hprime_max=float(hprime[:, 2].max()),
        hprime_frac_in=frac_in,
        underfit=underfit,
        overfit=overfit,
    )
