"""Disagreement/agreement statistics and the two players' objectives.

Core quantities, for teacher logits ``z_p`` and student logits ``z_q``:

* ``p_ds = softmax(z_p - z_q)`` encodes how much the two networks disagree
  about a sample; ``p_as = softmax(z_p + z_q)`` encodes their agreement.
* The per-sample entropy of ``p_ds`` (natural log; the normalization divides
  the base out anyway) is rescaled to ``h' = (h - batch_min) / (ln C -
  batch_min)``, so ``h' = 1`` means the student perfectly tracks the teacher
  and small ``h'`` means a large gap. The batch minimum is detached from the
  gradient graph: differentiating through a batch-argmin couples samples
  discontinuously, and per-sample gradients stay well-defined without it.
* Note the closed endpoint: the batch-min sample maps to exactly ``h' = 0``.

The generator's score (to be maximized) keeps ``h'`` inside a margin
``[lambda_l, lambda_u]`` via two hinge penalties, pulls generated samples
toward their conditioning label through cross-entropy on both ``p_ds`` and
``p_as``, and anchors batch statistics to the teacher's stored batch-norm
running statistics. The student's calibration loss (to be minimized) is the
batch mean of ``1 - h'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .nn import BatchNormLayer
from .tensor import Tensor, entropy_rows, log_softmax, softmax

DISAGREEMENT = "disagreement"
AGREEMENT = "agreement"
TEACHER_WRONG = "teacher_wrong"

_DEGENERATE_EPS = 1e-12


@dataclass
class GameHyperparams:
    alpha_ds: float = 0.2
    alpha_as: float = 0.1
    lambda_l: float = 0.1
    lambda_u: float = 0.8
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_l < self.lambda_u <= 1.0:
            raise ConfigError(
                f"need 0 <= lambda_l < lambda_u <= 1, got ({self.lambda_l}, {self.lambda_u})"
            )
        for name in ("alpha_ds", "alpha_as", "beta", "gamma"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")


def _check_same_shape(z_p: Tensor, z_q: Tensor) -> None:
    if z_p.data.shape != z_q.data.shape:
        raise DimensionError(
            f"logit shapes differ: {z_p.data.shape} vs {z_q.data.shape}"
        )


def disagreement_vector(z_p: Tensor, z_q: Tensor) -> Tensor:
    _check_same_shape(z_p, z_q)
    return softmax(z_p - z_q)


def agreement_vector(z_p: Tensor, z_q: Tensor) -> Tensor:
    _check_same_shape(z_p, z_q)
    return softmax(z_p + z_q)


def info_entropy(p: Tensor) -> Tensor:
    """Per-row Shannon entropy in nats; rows must be distributions."""
    sums = p.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p.data < 0.0):
        raise ContractError("info_entropy expects rows that sum to 1")
    return entropy_rows(p)


def normalize_entropy(h_info: Tensor, num_classes: int) -> Tensor:
    """Rescale entropies to [0, 1] against the uniform maximum ln C.

    The minimum is taken over the batch and treated as a constant. If the
    whole batch already sits at the maximum, returns all zeros rather than
    dividing by zero.
    """
    h_max = float(np.log(num_classes))
    h_min = float(h_info.data.min())
    denom = h_max - h_min
    if denom < _DEGENERATE_EPS:
        return Tensor(np.zeros_like(h_info.data))
    return (h_info - h_min) / denom


def normalized_disagreement_entropy(z_p: Tensor, z_q: Tensor, num_classes: int) -> Tensor:
    return normalize_entropy(info_entropy(disagreement_vector(z_p, z_q)), num_classes)


def classify_samples(z_p: np.ndarray, z_q: np.ndarray, y: np.ndarray) -> list[str]:
    """Label each sample disagreement / agreement / teacher_wrong.

    Agreement takes precedence (same argmax for teacher and student);
    disagreement additionally needs the teacher to predict the conditioning
    label. Argmax ties break toward the lowest class index.
    """
    p_hat = np.argmax(z_p, axis=1)
    q_hat = np.argmax(z_q, axis=1)
    y_hat = np.argmax(y, axis=1)
    out = []
    for p_c, q_c, y_c in zip(p_hat, q_hat, y_hat):
        if p_c == q_c:
            out.append(AGREEMENT)
        elif p_c == y_c:
            out.append(DISAGREEMENT)
        else:
            out.append(TEACHER_WRONG)
    return out


def cross_entropy_from_logits(logits: Tensor, y: Tensor) -> Tensor:
    """Batch mean of -log softmax(logits)[y]; y is one-hot."""
    return -(y * log_softmax(logits)).sum(axis=1).mean()


def loss_ds(z_p: Tensor, z_q: Tensor, y: Tensor) -> Tensor:
    """Cross-entropy between p_ds and the conditioning label.

    Computed in logit space (log-softmax of z_p - z_q) for stability; this is
    mathematically -ln p_ds[y].
    """
    _check_same_shape(z_p, z_q)
    return cross_entropy_from_logits(z_p - z_q, y)


def loss_as(z_p: Tensor, z_q: Tensor, y: Tensor) -> Tensor:
    _check_same_shape(z_p, z_q)
    return cross_entropy_from_logits(z_p + z_q, y)


def loss_bal(l_ds: Tensor, l_as: Tensor, alpha_ds: float, alpha_as: float) -> Tensor:
    if alpha_ds < 0.0 or alpha_as < 0.0:
        raise ConfigError("balance weights must be nonnegative")
    return alpha_ds * l_ds + alpha_as * l_as


def margin_terms(h_prime: Tensor, lambda_l: float, lambda_u: float) -> Tensor:
    """Hinge penalties keeping h' inside [lambda_l, lambda_u].

    Batch mean of -max(lambda_l - h', 0) - max(h' - lambda_u, 0); zero iff
    every sample lies inside the margin. Subgradient at either kink is 0.
    """
    if not 0.0 <= lambda_l < lambda_u <= 1.0:
        raise ConfigError(
            f"need 0 <= lambda_l < lambda_u <= 1, got ({lambda_l}, {lambda_u})"
        )
    lower = (lambda_l - h_prime).relu()
    upper = (h_prime - lambda_u).relu()
    return (-lower - upper).mean()


def loss_bns(bn_inputs: list[Tensor], bn_layers: list[BatchNormLayer]) -> Tensor:
    """Squared distance between batch statistics and stored running statistics.

    Per BN site: ||mean_batch - running_mean||^2 + ||std_batch - running_std||^2,
    where both stds come from biased variances, square-rooted with the layer's
    eps guard (so the distance stays differentiable at zero variance).
    """
    if len(bn_inputs) != len(bn_layers):
        raise DimensionError(
            f"{len(bn_inputs)} activation batches for {len(bn_layers)} BN sites"
        )
    total = Tensor(0.0)
    for x, layer in zip(bn_inputs, bn_layers):
        if x.data.shape[0] < 2:
            raise ContractError("batch statistics need at least 2 samples")
        mu = x.mean(axis=0)
        var = ((x - mu) ** 2).mean(axis=0)
        std = (var + layer.eps).sqrt()
        target_std = Tensor(np.sqrt(layer.running_var + layer.eps))
        total = total + ((mu - Tensor(layer.running_mean)) ** 2).sum() \
                      + ((std - target_std) ** 2).sum()
    return total


def generator_objective(z_p: Tensor, z_q: Tensor, y: Tensor,
                        bn_inputs: list[Tensor], bn_layers: list[BatchNormLayer],
                        hp: GameHyperparams, num_classes: int) -> Tensor:
    """Scalar the generator ascends; the training loop minimizes its negation."""
    h_prime = normalized_disagreement_entropy(z_p, z_q, num_classes)
    score = margin_terms(h_prime, hp.lambda_l, hp.lambda_u)
    if hp.beta != 0.0:
        bal = loss_bal(loss_ds(z_p, z_q, y), loss_as(z_p, z_q, y),
                       hp.alpha_ds, hp.alpha_as)
        score = score - hp.beta * bal
    if hp.gamma != 0.0:
        score = score - hp.gamma * loss_bns(bn_inputs, bn_layers)
    return score


def calibration_objective(z_p: Tensor, z_q: Tensor, num_classes: int) -> Tensor:
    """Batch mean of 1 - h'; minimizing drags the student's logits toward the
    teacher's (h' -> 1 needs p_ds -> uniform, i.e. z_q -> z_p up to a shift).

    The caller must ensure only z_q carries gradient (generator frozen).
    """
    h_prime = normalized_disagreement_entropy(z_p, z_q, num_classes)
    return (1.0 - h_prime).mean()
