"""Symmetric linear quantization with straight-through gradients.

The mapping from a real value to an n-bit integer code is

    code = round((2^n - 1) * (x - lo) / (hi - lo) - 2^(n-1))

with round-half-away-from-zero (round(.) is otherwise ambiguous; every
expected value in the tests was computed under this rule). Codes live in
[-2^(n-1), 2^(n-1) - 1]. Inputs are clamped into [lo, hi] before mapping, and
the training-time gradient is the clipping straight-through estimator: 1
inside the range, 0 outside.

Weight ranges are recomputed from the latent weights on every forward
(dynamic per-tensor min/max); activation ranges are tracked by an exponential
moving average while calibrating and frozen at eval time. A degenerate range
(min == max, e.g. a constant tensor) passes through unquantized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateRangeError
from .nn import BatchNormLayer, LinearLayer, MlpNetwork, Relu
from .tensor import Tensor


@dataclass
class QuantSpec:
    bits: int
    act_ema_decay: float = 0.9

    def __post_init__(self):
        if self.bits < 2:
            raise ContractError(f"bit width must be >= 2, got {self.bits}")
        if not 0.0 <= self.act_ema_decay < 1.0:
            raise ContractError(f"ema decay must be in [0,1), got {self.act_ema_decay}")

    @property
    def code_min(self) -> int:
        return -(2 ** (self.bits - 1))

    @property
    def code_max(self) -> int:
        return 2 ** (self.bits - 1) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))


def quantize_array(x: np.ndarray, lo: float, hi: float, bits: int) -> np.ndarray:
    """Map reals to integer codes; clamps first, so any finite input is legal."""
    if lo >= hi:
        raise DegenerateRangeError(f"quantization range [{lo}, {hi}] is degenerate")
    levels = float(2 ** bits - 1)
    half = float(2 ** (bits - 1))
    clamped = np.clip(x, lo, hi)
    codes = round_half_away(levels * (clamped - lo) / (hi - lo) - half)
    return np.clip(codes, -half, half - 1.0)


def dequantize_array(codes: np.ndarray, lo: float, hi: float, bits: int) -> np.ndarray:
    if lo >= hi:
        raise DegenerateRangeError(f"quantization range [{lo}, {hi}] is degenerate")
    half = 2 ** (bits - 1)
    codes = np.asarray(codes, dtype=np.float64)
    if np.any(codes < -half) or np.any(codes > half - 1):
        raise ContractError(f"code outside [{-half}, {half - 1}] for {bits}-bit grid")
    return (codes + half) * (hi - lo) / float(2 ** bits - 1) + lo


def quantize_value(x: float, lo: float, hi: float, bits: int) -> int:
    return int(quantize_array(np.float64(x), lo, hi, bits))


def dequantize_value(code: int, lo: float, hi: float, bits: int) -> float:
    return float(dequantize_array(np.float64(code), lo, hi, bits))


def fake_quant(x: Tensor, lo: float, hi: float, bits: int) -> Tensor:
    """quantize-dequantize forward with a clipping STE backward.

    Degenerate ranges return ``x`` unchanged.
    """
    if lo >= hi:
        return x
    out_data = dequantize_array(quantize_array(x.data, lo, hi, bits), lo, hi, bits)
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x._accum(g * mask)

    return Tensor._op(out_data, (x,), bw)


@dataclass
class FakeQuantState:
    """Observed activation range at one quantization site."""

    observed_min: float | None = None
    observed_max: float | None = None
    frozen: bool = False

    def observe(self, batch: np.ndarray, decay: float) -> None:
        if self.frozen:
            return
        lo = float(batch.min())
        hi = float(batch.max())
        if self.observed_min is None:
            self.observed_min, self.observed_max = lo, hi
        else:
            self.observed_min = decay * self.observed_min + (1.0 - decay) * lo
            self.observed_max = decay * self.observed_max + (1.0 - decay) * hi

    @property
    def has_range(self) -> bool:
        return (
            self.observed_min is not None
            and self.observed_max is not None
            and self.observed_min < self.observed_max
        )


class QuantLinear:
    """Linear layer holding latent full-precision weights.

    Forward fake-quantizes the weights over their dynamic per-tensor range and
    the output activations over the EMA-tracked range. The bias stays full
    precision.
    """

    def __init__(self, source: LinearLayer, spec: QuantSpec):
        self.weight = Tensor(source.weight.data.copy(), requires_grad=True)
        self.bias = Tensor(source.bias.data.copy(), requires_grad=True)
        self.spec = spec
        self.act_state = FakeQuantState()

    def forward(self, x: Tensor, observe: bool) -> Tensor:
        lo = float(self.weight.data.min())
        hi = float(self.weight.data.max())
        wq = fake_quant(self.weight, lo, hi, self.spec.bits)
        out = x.matmul(wq.T) + self.bias
        if observe:
            self.act_state.observe(out.data, self.spec.act_ema_decay)
        if self.act_state.has_range:
            out = fake_quant(out, self.act_state.observed_min,
                             self.act_state.observed_max, self.spec.bits)
        return out

    def parameters(self):
        return [self.weight, self.bias]


class QuantizedMlp:
    """Student network: teacher architecture with fake-quantized linears.

    Batch-norm layers always normalize with the copied running statistics and
    never update them; the train/eval flag only controls whether activation
    ranges keep observing. Trainable state is the latent linear weights plus
    the batch-norm affine parameters.
    """

    def __init__(self, layers: list, input_dim: int, output_dim: int, spec: QuantSpec):
        self.layers = layers
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.spec = spec
        self.training = False

    def train(self):
        self.training = True
        for st in self.act_states():
            st.frozen = False
        return self

    def eval(self):
        self.training = False
        for st in self.act_states():
            st.frozen = True
        return self

    def forward(self, x: Tensor) -> Tensor:
        out = x
        for layer in self.layers:
            if isinstance(layer, QuantLinear):
                out = layer.forward(out, observe=self.training)
            elif isinstance(layer, BatchNormLayer):
                out = layer.forward(out, training=False)
            else:
                out = layer.forward(out)
        return out

    def quant_linears(self) -> list[QuantLinear]:
        return [l for l in self.layers if isinstance(l, QuantLinear)]

    def act_states(self) -> list[FakeQuantState]:
        return [l.act_state for l in self.quant_linears()]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, QuantLinear):
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


def build_quantized_student(teacher: MlpNetwork, spec: QuantSpec) -> QuantizedMlp:
    """Clone the teacher into a fake-quantized student with shared architecture."""
    layers: list = []
    for layer in teacher.layers:
        if isinstance(layer, LinearLayer):
            layers.append(QuantLinear(layer, spec))
        elif isinstance(layer, BatchNormLayer):
            bn = BatchNormLayer(layer.gamma.data.size, layer.momentum, layer.eps)
            bn.gamma = Tensor(layer.gamma.data.copy(), requires_grad=True)
            bn.beta = Tensor(layer.beta.data.copy(), requires_grad=True)
            bn.running_mean = layer.running_mean.copy()
            bn.running_var = layer.running_var.copy()
            layers.append(bn)
        elif isinstance(layer, Relu):
            layers.append(Relu())
        else:
            raise ContractError(f"cannot quantize layer of type {type(layer).__name__}")
    return QuantizedMlp(layers, teacher.input_dim, teacher.output_dim, spec)
