"""Analytic-vs-numeric gradient comparison for attention and LeViT blocks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .attention import AttentionConfig, AttentionWeights, attention, init_weights
from .levit import LevitBlockConfig, LevitBlockWeights, init_block_weights, levit_block_forward
from .tensor_core import (
    GradTape,
    Tensor,
    backward,
    finite_diff_grad,
    max_relative_error,
    mul,
    total,
)

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckReport:
    target: str
    variant: str
    seed: int
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    kind: str = "gradcheck"

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {**asdict(self), "max_error": self.max_error, "passed": self.passed}


def check_function(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, Tensor],
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error between tape gradients and central differences, per input."""
    with GradTape() as tape:
        loss = fn(inputs)
    analytic = backward(loss, tape, wrt=list(inputs.values()))
    errors = {}
    for name, t in inputs.items():

        def probe(v: Tensor, name=name) -> Tensor:
            return fn({**inputs, name: v})

        numeric = finite_diff_grad(probe, t, step)
        errors[name] = max_relative_error(analytic[t].data, numeric.data)
    return errors


def _readout(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    # random readout keeps the scalar loss from collapsing symmetric terms
    r = Tensor(rng.standard_normal(out.shape))
    return lambda y: total(mul(y, r))


def check_attention(cfg: AttentionConfig, seed: int, tolerance: float = DEFAULT_TOLERANCE,
                    step: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    w = init_weights(cfg, rng)
    x = Tensor(rng.standard_normal((cfg.seq_len, cfg.model_dim)))
    inputs = {"x": x, **w.tensors()}
    readout = _readout(attention(x, w, cfg), rng)

    def fn(ins):
        ws = AttentionWeights(**{k: v for k, v in ins.items() if k != "x"})
        return readout(attention(ins["x"], ws, cfg))

    return GradCheckReport("attention", cfg.variant.value, seed, tolerance,
                           check_function(fn, inputs, step))


def check_levit(cfg: LevitBlockConfig, seed: int, tolerance: float = DEFAULT_TOLERANCE,
                step: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    w = init_block_weights(cfg, rng)
    x = Tensor(rng.standard_normal((cfg.tokens, cfg.in_channels)))
    inputs = {"x": x, **w.tensors()}
    readout = _readout(levit_block_forward(x, w, cfg), rng)

    def fn(ins):
        ws = LevitBlockWeights(**{k: v for k, v in ins.items() if k != "x"})
        return readout(levit_block_forward(ins["x"], ws, cfg))

    return GradCheckReport("levit_block", cfg.variant.value, seed, tolerance,
                           check_function(fn, inputs, step))
