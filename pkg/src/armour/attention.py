"""Self-attention with the four Q/K/V weight-sharing schemes.

All variants compute, per head, ``softmax(Q K^T / sqrt(d_h)) @ values``
and differ only in which projection supplies K and the values:

=====================  =========  ===========
variant                K from     values from
=====================  =========  ===========
regular                W_K        W_V
armour                 W_K        W_Q (Q reused)
qk_shared              W_Q        W_V
qk_shared_diag         W_Q        W_V, self-attention masked
kv_shared              W_K        W_K (K reused)
=====================  =========  ===========
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .tensor_core import (
    DimensionError,
    InvalidMaskError,
    Tensor,
    add,
    concat_many,
    mask_fill,
    matmul,
    scale,
    slice_last_axis,
    softmax_rows,
    transpose,
)


class AttentionVariant(str, enum.Enum):
    REGULAR = "regular"
    ARMOUR = "armour"
    QK_SHARED = "qk_shared"
    QK_SHARED_DIAG = "qk_shared_diag"
    KV_SHARED = "kv_shared"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: "str | AttentionVariant") -> "AttentionVariant":
        if isinstance(text, cls):
            return text
        key = text.strip().lower().replace("-", "_")
        aliases = {"qk_shared_diag_masked": "qk_shared_diag", "qkshared": "qk_shared"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown attention variant {text!r}; choose from {names}") from None


class StrictWeightsError(ValueError):
    """Weight set does not match what the variant requires."""


# projections each variant drops
_OMITTED = {
    AttentionVariant.REGULAR: (),
    AttentionVariant.ARMOUR: ("v",),
    AttentionVariant.QK_SHARED: ("k",),
    AttentionVariant.QK_SHARED_DIAG: ("k",),
    AttentionVariant.KV_SHARED: ("v",),
}


@dataclass(frozen=True)
class AttentionConfig:
    variant: AttentionVariant = AttentionVariant.REGULAR
    seq_len: int = 197
    model_dim: int = 192
    heads: int = 3
    use_bias: bool = True
    include_output_proj: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", AttentionVariant.parse(self.variant))
        for name in ("seq_len", "model_dim", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def with_variant(self, variant) -> "AttentionConfig":
        return AttentionConfig(
            AttentionVariant.parse(variant), self.seq_len, self.model_dim,
            self.heads, self.use_bias, self.include_output_proj,
        )


def required_names(cfg: AttentionConfig) -> list[str]:
    """Weight fields the config needs, e.g. ``["w_q", "b_q", "w_k", ...]``."""
    names = []
    for proj in ("q", "k", "v"):
        if proj in _OMITTED[cfg.variant]:
            continue
        names.append(f"w_{proj}")
        if cfg.use_bias:
            names.append(f"b_{proj}")
    if cfg.include_output_proj:
        names.append("w_o")
        if cfg.use_bias:
            names.append("b_o")
    return names


def attention_param_count(cfg: AttentionConfig) -> int:
    d = cfg.model_dim
    return sum(d * d if n.startswith("w_") else d for n in required_names(cfg))


@dataclass
class AttentionWeights:
    w_q: Tensor | None = None
    w_k: Tensor | None = None
    w_v: Tensor | None = None
    b_q: Tensor | None = None
    b_k: Tensor | None = None
    b_v: Tensor | None = None
    w_o: Tensor | None = None
    b_o: Tensor | None = None

    def present(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]

    def tensors(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in self.present()}

    def check(self, cfg: AttentionConfig) -> None:
        want = set(required_names(cfg))
        have = set(self.present())
        if want != have:
            extra = sorted(have - want)
            missing = sorted(want - have)
            raise StrictWeightsError(
                f"{cfg.variant} weights mismatch: extra={extra} missing={missing}"
            )
        d = cfg.model_dim
        for name in have:
            shape = (d, d) if name.startswith("w_") else (d,)
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def to_named(self, prefix: str = "layer0") -> dict[str, np.ndarray]:
        return {f"{prefix}.{n}": t.data for n, t in self.tensors().items()}

    @classmethod
    def from_named(
        cls, named: Mapping[str, np.ndarray], cfg: AttentionConfig, prefix: str = "layer0"
    ) -> "AttentionWeights":
        """Strictly rebuild weights for ``cfg`` from ``prefix.*`` entries."""
        lead = prefix + "."
        mine = {k[len(lead):]: v for k, v in named.items() if k.startswith(lead)}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mine) - known)
        if unknown:
            raise StrictWeightsError(f"unrecognized tensors under {prefix}: {unknown}")
        w = cls(**{k: Tensor(v) for k, v in mine.items()})
        w.check(cfg)
        return w


def init_weights(cfg: AttentionConfig, rng: np.random.Generator) -> AttentionWeights:
    """Seeded uniform(-1/sqrt(d), 1/sqrt(d)) init for every required tensor."""
    d = cfg.model_dim
    bound = 1.0 / math.sqrt(d)
    kw = {}
    for name in required_names(cfg):
        shape = (d, d) if name.startswith("w_") else (d,)
        kw[name] = Tensor(rng.uniform(-bound, bound, size=shape))
    return AttentionWeights(**kw)


# --------------------------------------------------------------------------
# forward


def _project(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def _check_input(x: Tensor, cfg: AttentionConfig) -> None:
    if x.ndim < 2 or x.shape[-1] != cfg.model_dim:
        raise DimensionError(f"input shape {x.shape} does not end in model_dim {cfg.model_dim}")


def _head(t: Tensor, i: int, dh: int, heads: int) -> Tensor:
    return t if heads == 1 else slice_last_axis(t, i * dh, (i + 1) * dh)


def _diag_mask(n: int) -> np.ndarray | None:
    # a lone token has no other valid target, so it keeps attending to itself
    return np.eye(n, dtype=bool) if n >= 2 else None


def _scores(q: Tensor, k: Tensor, dh: int, diag_masked: bool) -> Tensor:
    s = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh))
    if diag_masked:
        mask = _diag_mask(q.shape[-2])
        if mask is not None:
            s = mask_fill(s, mask)
    return s


def _qkv(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> tuple[Tensor, Tensor, Tensor]:
    q = _project(x, w.w_q, w.b_q)
    v_ = cfg.variant
    if v_ in (AttentionVariant.QK_SHARED, AttentionVariant.QK_SHARED_DIAG):
        k = q
    else:
        k = _project(x, w.w_k, w.b_k)
    if v_ is AttentionVariant.ARMOUR:
        v = q
    elif v_ is AttentionVariant.KV_SHARED:
        v = k
    else:
        v = _project(x, w.w_v, w.b_v)
    return q, k, v


def _multi_head(
    x: Tensor, w: AttentionWeights, cfg: AttentionConfig
) -> tuple[Tensor, list[Tensor]]:
    _check_input(x, cfg)
    w.check(cfg)
    q, k, v = _qkv(x, w, cfg)
    dh, h = cfg.head_dim, cfg.heads
    diag = cfg.variant is AttentionVariant.QK_SHARED_DIAG
    outs, probs = [], []
    for i in range(h):
        qh, kh, vh = _head(q, i, dh, h), _head(k, i, dh, h), _head(v, i, dh, h)
        p = softmax_rows(_scores(qh, kh, dh, diag))
        probs.append(p)
        outs.append(matmul(p, vh))
    out = outs[0] if h == 1 else concat_many(outs)
    if cfg.include_output_proj:
        out = _project(out, w.w_o, w.b_o)
    return out, probs


def _require(cfg: AttentionConfig, *allowed: AttentionVariant) -> None:
    if cfg.variant not in allowed:
        names = "/".join(a.value for a in allowed)
        raise ValueError(f"config variant {cfg.variant} cannot run the {names} path")


def regular_attention(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    _require(cfg, AttentionVariant.REGULAR)
    return _multi_head(x, w, cfg)[0]


def armour_attention(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Values are the queries themselves; ``w`` must not carry W_V."""
    _require(cfg, AttentionVariant.ARMOUR)
    return _multi_head(x, w, cfg)[0]


def qk_shared_attention(
    x: Tensor, w: AttentionWeights, cfg: AttentionConfig, diag_masked: bool | None = None
) -> Tensor:
    _require(cfg, AttentionVariant.QK_SHARED, AttentionVariant.QK_SHARED_DIAG)
    if diag_masked is not None:
        want = AttentionVariant.QK_SHARED_DIAG if diag_masked else AttentionVariant.QK_SHARED
        if want is not cfg.variant:
            raise ValueError(f"diag_masked={diag_masked} conflicts with variant {cfg.variant}")
    return _multi_head(x, w, cfg)[0]


def kv_shared_attention(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Keys double as values: K^T feeds the scores, untransposed K the output."""
    _require(cfg, AttentionVariant.KV_SHARED)
    return _multi_head(x, w, cfg)[0]


_DISPATCH = {
    AttentionVariant.REGULAR: regular_attention,
    AttentionVariant.ARMOUR: armour_attention,
    AttentionVariant.QK_SHARED: qk_shared_attention,
    AttentionVariant.QK_SHARED_DIAG: qk_shared_attention,
    AttentionVariant.KV_SHARED: kv_shared_attention,
}


def attention(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Run whichever variant ``cfg`` selects."""
    return _DISPATCH[cfg.variant](x, w, cfg)


def attention_probabilities(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Per-head probability matrices stacked as ``(..., h, L, L)``."""
    _, probs = _multi_head(x, w, cfg)
    stacked = np.stack([p.data for p in probs], axis=-3)
    rows = stacked.sum(axis=-1)
    if not np.allclose(rows, 1.0, rtol=0, atol=1e-12):
        raise InvalidMaskError("attention rows do not sum to one")
    return Tensor(stacked)
