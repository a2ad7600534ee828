"""LeViT-style attention block and its two compact value schemes.

The block works on a flattened token map ``x`` of shape ``(H*W, C)``. The
1x1 convolutions are per-token linear maps on channels. Per head, Q and K
have width D and the value fed to the second matmul has width 2D:

* ``baseline``       value = V, with V projected to 2D
* ``half_v_concat_q`` value = [V | Q], with V projected to D
* ``qk_replaces_v``   value = [Q | K], no V projection at all

Head outputs (each ``HW x 2D``) are concatenated and projected back to C.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .attention import StrictWeightsError
from .tensor_core import (
    DimensionError,
    Tensor,
    add,
    concat_last_axis,
    concat_many,
    matmul,
    scale,
    slice_last_axis,
    softmax_rows,
    transpose,
)


class LevitVariant(str, enum.Enum):
    BASELINE = "baseline"
    HALF_V_CONCAT_Q = "half_v_concat_q"
    QK_REPLACES_V = "qk_replaces_v"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: "str | LevitVariant") -> "LevitVariant":
        if isinstance(text, cls):
            return text
        try:
            return cls(text.strip().lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown LeViT block variant {text!r}; choose from {names}") from None


@dataclass(frozen=True)
class LevitBlockConfig:
    variant: LevitVariant = LevitVariant.BASELINE
    heads: int = 4
    key_dim: int = 16
    height: int = 14
    width: int = 14
    in_channels: int = 128
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", LevitVariant.parse(self.variant))
        for name in ("heads", "key_dim", "height", "width", "in_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def tokens(self) -> int:
        return self.height * self.width

    @property
    def value_width(self) -> int:
        """Per-head width of the value matrix entering the second matmul."""
        return 2 * self.key_dim

    @property
    def v_proj_width(self) -> int:
        """Total output columns of the V projection (0 when absent)."""
        nd = self.heads * self.key_dim
        return {LevitVariant.BASELINE: 2 * nd, LevitVariant.HALF_V_CONCAT_Q: nd,
                LevitVariant.QK_REPLACES_V: 0}[self.variant]

    def with_variant(self, variant) -> "LevitBlockConfig":
        return LevitBlockConfig(LevitVariant.parse(variant), self.heads, self.key_dim,
                                self.height, self.width, self.in_channels, self.use_bias)


def expected_shapes(cfg: LevitBlockConfig) -> dict[str, tuple[int, ...]]:
    c, nd = cfg.in_channels, cfg.heads * cfg.key_dim
    shapes = {"p_q": (c, nd), "p_k": (c, nd)}
    if cfg.v_proj_width:
        shapes["p_v"] = (c, cfg.v_proj_width)
    shapes["p_o"] = (cfg.heads * cfg.value_width, c)
    if cfg.use_bias:
        for name in list(shapes):
            shapes["b_" + name[2:]] = (shapes[name][1],)
    return shapes


def block_param_count(cfg: LevitBlockConfig) -> int:
    return sum(math.prod(s) for s in expected_shapes(cfg).values())


def block_param_savings(cfg: LevitBlockConfig) -> int:
    """Parameters saved relative to the baseline block at the same dims."""
    return block_param_count(cfg.with_variant(LevitVariant.BASELINE)) - block_param_count(cfg)


@dataclass
class LevitBlockWeights:
    p_q: Tensor | None = None
    p_k: Tensor | None = None
    p_v: Tensor | None = None
    p_o: Tensor | None = None
    b_q: Tensor | None = None
    b_k: Tensor | None = None
    b_v: Tensor | None = None
    b_o: Tensor | None = None

    def present(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]

    def tensors(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in self.present()}

    def check(self, cfg: LevitBlockConfig) -> None:
        want = expected_shapes(cfg)
        have = set(self.present())
        if have != set(want):
            raise StrictWeightsError(
                f"{cfg.variant} block weights mismatch: extra={sorted(have - set(want))} "
                f"missing={sorted(set(want) - have)}"
            )
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def to_named(self, prefix: str = "block") -> dict[str, np.ndarray]:
        return {f"{prefix}.{n}": t.data for n, t in self.tensors().items()}

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray], cfg: LevitBlockConfig,
                   prefix: str = "block") -> "LevitBlockWeights":
        lead = prefix + "."
        mine = {k[len(lead):]: v for k, v in named.items() if k.startswith(lead)}
        unknown = sorted(set(mine) - {f.name for f in fields(cls)})
        if unknown:
            raise StrictWeightsError(f"unrecognized tensors under {prefix}: {unknown}")
        w = cls(**{k: Tensor(v) for k, v in mine.items()})
        w.check(cfg)
        return w


def init_block_weights(cfg: LevitBlockConfig, rng: np.random.Generator) -> LevitBlockWeights:
    kw = {}
    for name, shape in expected_shapes(cfg).items():
        fan_in = shape[0] if len(shape) == 2 else cfg.in_channels
        bound = 1.0 / math.sqrt(fan_in)
        kw[name] = Tensor(rng.uniform(-bound, bound, size=shape))
    return LevitBlockWeights(**kw)


def _proj(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def _block(x: Tensor, w: LevitBlockWeights, cfg: LevitBlockConfig) -> tuple[Tensor, list[Tensor]]:
    if x.ndim < 2 or x.shape[-2:] != (cfg.tokens, cfg.in_channels):
        raise DimensionError(
            f"input shape {x.shape} does not end in (H*W, C) = ({cfg.tokens}, {cfg.in_channels})"
        )
    w.check(cfg)
    D, n_heads = cfg.key_dim, cfg.heads
    q = _proj(x, w.p_q, w.b_q)
    k = _proj(x, w.p_k, w.b_k)
    v = _proj(x, w.p_v, w.b_v) if w.p_v is not None else None
    inv = 1.0 / math.sqrt(D)
    outs, probs = [], []
    for n in range(n_heads):
        qn = slice_last_axis(q, n * D, (n + 1) * D)
        kn = slice_last_axis(k, n * D, (n + 1) * D)
        if cfg.variant is LevitVariant.BASELINE:
            value = slice_last_axis(v, n * 2 * D, (n + 1) * 2 * D)
        elif cfg.variant is LevitVariant.HALF_V_CONCAT_Q:
            value = concat_last_axis(slice_last_axis(v, n * D, (n + 1) * D), qn)
        else:
            value = concat_last_axis(qn, kn)
        p = softmax_rows(scale(matmul(qn, transpose(kn)), inv))
        probs.append(p)
        outs.append(matmul(p, value))
    heads = outs[0] if n_heads == 1 else concat_many(outs)
    return _proj(heads, w.p_o, w.b_o), probs


def levit_block_forward(x: Tensor, w: LevitBlockWeights, cfg: LevitBlockConfig) -> Tensor:
    """Forward pass of the block on ``x`` of shape ``(..., H*W, C)``."""
    return _block(x, w, cfg)[0]


def levit_block_probabilities(x: Tensor, w: LevitBlockWeights, cfg: LevitBlockConfig) -> Tensor:
    return Tensor(np.stack([p.data for p in _block(x, w, cfg)[1]], axis=-3))


def tie_half_v_to_baseline(w: LevitBlockWeights, cfg: LevitBlockConfig) -> LevitBlockWeights:
    """Baseline weights that reproduce a ``half_v_concat_q`` block exactly.

    Head n of the baseline V projection becomes [P_V head n | P_Q head n],
    so its value slice equals concat(V_n, Q_n).
    """
    if cfg.variant is not LevitVariant.HALF_V_CONCAT_Q:
        raise ValueError("expected half_v_concat_q weights")
    D = cfg.key_dim
    cols, bias = [], []
    for n in range(cfg.heads):
        sl = slice(n * D, (n + 1) * D)
        cols += [w.p_v.data[:, sl], w.p_q.data[:, sl]]
        if cfg.use_bias:
            bias += [w.b_v.data[sl], w.b_q.data[sl]]
    return LevitBlockWeights(
        p_q=w.p_q, p_k=w.p_k, p_v=Tensor(np.concatenate(cols, axis=1)), p_o=w.p_o,
        b_q=w.b_q, b_k=w.b_k, b_v=Tensor(np.concatenate(bias)) if bias else None, b_o=w.b_o,
    )
