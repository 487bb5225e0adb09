"""MLP networks, batch normalization with running statistics, and optimizers.

The teacher and student share one architecture; the generator is a separate
conditional network that maps (noise, one-hot label) to sample space. All
parameters are plain :class:`~adadfq.tensor.Tensor` leaves.

Batch-norm conventions, fixed here so downstream statistics losses are
well-defined:

* batch variance is the biased (population) estimator;
* the running-stat update is ``new = (1 - momentum) * old + momentum * batch``;
* eval mode normalizes with running statistics only.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, concat_cols


class LinearLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return x.matmul(self.weight.T) + self.bias

    def parameters(self):
        return [self.weight, self.bias]


class BatchNormLayer:
    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"batch-norm momentum must be in (0,1), got {momentum}")
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor, training: bool, update_running: bool = True) -> Tensor:
        if training:
            mu = x.mean(axis=0)
            var = ((x - mu) ** 2).mean(axis=0)
            if update_running:
                m = self.momentum
                self.running_mean = (1.0 - m) * self.running_mean + m * mu.data
                self.running_var = (1.0 - m) * self.running_var + m * var.data
        else:
            mu = Tensor(self.running_mean)
            var = Tensor(self.running_var)
        return (x - mu) / (var + self.eps).sqrt() * self.gamma + self.beta

    def parameters(self):
        return [self.gamma, self.beta]


class Relu:
    def forward(self, x: Tensor) -> Tensor:
        return x.relu()

    def parameters(self):
        return []


class MlpNetwork:
    """Ordered layers with a train/eval flag and batch-norm input hooks.

    After each ``forward``, ``bn_inputs`` holds the input activation of every
    BatchNormLayer in layer order (one entry per BN site).
    """

    def __init__(self, layers: list, input_dim: int, output_dim: int):
        self.layers = layers
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.training = True
        self.bn_inputs: list[Tensor] = []

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise DimensionError(
                f"expected input of width {self.input_dim}, got shape {x.data.shape}"
            )
        self.bn_inputs = []
        out = x
        for layer in self.layers:
            if isinstance(layer, BatchNormLayer):
                self.bn_inputs.append(out)
                out = layer.forward(out, self.training)
            else:
                out = layer.forward(out)
        return out

    def bn_layers(self) -> list[BatchNormLayer]:
        return [l for l in self.layers if isinstance(l, BatchNormLayer)]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, LinearLayer):
                out[f"layers.{i}.weight"] = layer.weight
                out[f"layers.{i}.bias"] = layer.bias
            elif isinstance(layer, BatchNormLayer):
                out[f"layers.{i}.gamma"] = layer.gamma
                out[f"layers.{i}.beta"] = layer.beta
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNormLayer):
                out[f"layers.{i}.running_mean"] = layer.running_mean
                out[f"layers.{i}.running_var"] = layer.running_var
        return out


def make_mlp(input_dim: int, hidden: tuple[int, ...], output_dim: int,
             rng: np.random.Generator) -> MlpNetwork:
    """d -> hidden... -> output with BN+ReLU after each hidden linear layer."""
    layers: list = []
    prev = input_dim
    for width in hidden:
        layers.append(LinearLayer(prev, width, rng))
        layers.append(BatchNormLayer(width))
        layers.append(Relu())
        prev = width
    layers.append(LinearLayer(prev, output_dim, rng))
    return MlpNetwork(layers, input_dim, output_dim)


def validate_one_hot(y: Tensor) -> None:
    yd = y.data
    if yd.ndim != 2:
        raise ContractError(f"one-hot labels must be 2-D, got shape {yd.shape}")
    is_binary = np.all((yd == 0.0) | (yd == 1.0))
    if not is_binary or not np.all(yd.sum(axis=1) == 1.0):
        raise ContractError("labels are not valid one-hot rows")


class ConditionalGenerator:
    """Maps (noise z, one-hot label y) to sample space via a label embedding."""

    def __init__(self, noise_dim: int, num_classes: int, sample_dim: int,
                 rng: np.random.Generator, embed_dim: int = 8,
                 hidden: tuple[int, ...] = (64, 64)):
        self.noise_dim = noise_dim
        self.num_classes = num_classes
        self.sample_dim = sample_dim
        self.embed_dim = embed_dim
        self.embedding = Tensor(rng.normal(0.0, 1.0, size=(num_classes, embed_dim)),
                                requires_grad=True)
        self.body = make_mlp(noise_dim + embed_dim, hidden, sample_dim, rng)

    def train(self):
        self.body.train()
        return self

    def eval(self):
        self.body.eval()
        return self

    @property
    def training(self):
        return self.body.training

    def forward(self, z: Tensor, y: Tensor) -> Tensor:
        validate_one_hot(y)
        if z.data.shape[1] != self.noise_dim:
            raise DimensionError(
                f"expected noise of width {self.noise_dim}, got shape {z.data.shape}"
            )
        emb = y.matmul(self.embedding)
        return self.body.forward(concat_cols([z, emb]))

    def parameters(self) -> list[Tensor]:
        return [self.embedding] + self.body.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        for name, p in self.body.named_parameters().items():
            out[f"body.{name}"] = p
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"body.{k}": v for k, v in self.body.named_buffers().items()}


class SgdMomentum:
    """SGD with Nesterov momentum in the standard transformed-variable form:

        v <- mu * v + g
        p <- p - lr * (g + mu * v)      (nesterov)
        p <- p - lr * v                 (plain momentum)

    This is the usual reformulation of lookahead Nesterov momentum that only
    needs the gradient at the current iterate. Weight decay is added to the
    gradient before the momentum update.
    """

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0, nesterov: bool = True):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                raise ContractError("optimizer step with unpopulated gradient")
            g = p.grad + self.weight_decay * p.data
            if self.momentum != 0.0:
                v *= self.momentum
                v += g
                update = g + self.momentum * v if self.nesterov else v
            else:
                update = g
            p.data -= self.lr * update


class AdamOptimizer:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError("optimizer step with unpopulated gradient")
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
