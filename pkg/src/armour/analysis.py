"""Weight redundancy and analytic parameter / MAC accounting."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .attention import AttentionConfig, AttentionVariant, attention_param_count
from .levit import LevitBlockConfig, LevitVariant
from .tensor_core import DimensionError, Tensor

DEFAULT_EPSILON = 1e-2


class SpecError(ValueError):
    pass


# --------------------------------------------------------------------------
# redundancy


@dataclass
class RedundancyReport:
    pair: str
    epsilon: float
    fraction_below: float
    element_count: int
    below_count: int
    per_layer: list[dict] = field(default_factory=list)
    kind: str = "redundancy"

    def to_dict(self) -> dict:
        return asdict(self)


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _count_below(a: np.ndarray, b: np.ndarray, epsilon: float) -> int:
    return int(np.count_nonzero(np.abs(a - b) < epsilon))


def redundancy(a, b, epsilon: float = DEFAULT_EPSILON, pair: str = "a_b") -> RedundancyReport:
    """Fraction of elements with ``|a_i - b_i| < epsilon`` (strict)."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"redundancy: shapes {a.shape} and {b.shape} differ")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = int(a.size)
    below = _count_below(a.astype(np.float64), b.astype(np.float64), epsilon)
    return RedundancyReport(pair, epsilon, below / n if n else 0.0, n, below)


def _normalize(w: np.ndarray) -> np.ndarray:
    s = np.abs(w).max()
    return w / s if s > 0 else w


def redundancy_over_layers(
    named: Mapping[str, np.ndarray],
    pair: tuple[str, str],
    epsilon: float = DEFAULT_EPSILON,
    mode: str = "whole",
    heads: int = 1,
    normalize: bool = False,
) -> RedundancyReport:
    """Aggregate redundancy of one projection pair across every layer in ``named``.

    ``pair`` names projections like ``("wq", "wk")``. ``mode="per_head"``
    additionally splits each matrix into ``heads`` column blocks and reports
    them separately; the aggregate fraction is the same in both modes.
    ``normalize`` divides each matrix by its max magnitude first.
    """
    fa, fb = (f"w_{p.lower().lstrip('w').lstrip('_')}" for p in pair)
    prefixes = sorted({k[: -len(fa)].rstrip(".") for k in named if k.endswith("." + fa) or k == fa})
    layers = []
    total_n = total_below = 0
    for prefix in prefixes:
        ka = f"{prefix}.{fa}" if prefix else fa
        kb = f"{prefix}.{fb}" if prefix else fb
        if kb not in named:
            continue
        a = np.asarray(named[ka], dtype=np.float64)
        b = np.asarray(named[kb], dtype=np.float64)
        if normalize:
            a, b = _normalize(a), _normalize(b)
        r = redundancy(a, b, epsilon)
        entry = {"layer": prefix, "fraction_below": r.fraction_below, "element_count": r.element_count}
        if mode == "per_head":
            if a.shape[-1] % heads:
                raise DimensionError(f"{ka}: {a.shape[-1]} columns not divisible by {heads} heads")
            dh = a.shape[-1] // heads
            entry["heads"] = [
                redundancy(a[:, i * dh:(i + 1) * dh], b[:, i * dh:(i + 1) * dh], epsilon).fraction_below
                for i in range(heads)
            ]
        elif mode != "whole":
            raise ValueError(f"unknown redundancy mode {mode!r}")
        layers.append(entry)
        total_n += r.element_count
        total_below += r.below_count
    if not layers:
        raise SpecError(f"no layers carry both {fa} and {fb}")
    label = f"{fa.replace('_', '')}_{fb.replace('_', '')}"
    return RedundancyReport(label, epsilon, total_below / total_n, total_n, total_below, layers)


# --------------------------------------------------------------------------
# architecture specs

LAYER_KINDS = ("attention", "mlp", "embed", "head", "other")


@dataclass(frozen=True)
class LayerSpec:
    """One entry of an architecture, repeated ``count`` times.

    ``dims`` keys by kind:
      attention: dim, heads        mlp: dim, hidden
      embed: in_features, dim, positions, extra_tokens
      head: dim, classes           other: params
    """

    kind: str
    name: str
    dims: Mapping[str, int]
    variant: str = "regular"
    bias: bool = True
    count: int = 1
    output_proj: bool = True


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    def with_variant(self, variant) -> "ArchSpec":
        v = AttentionVariant.parse(variant).value
        layers = tuple(replace(l, variant=v) if l.kind == "attention" else l for l in self.layers)
        return ArchSpec(f"{self.name}[{v}]", layers)

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [
            {**asdict(l), "dims": dict(l.dims)} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchSpec":
        try:
            layers = tuple(
                LayerSpec(kind=e["kind"], name=e.get("name", e["kind"]), dims=dict(e["dims"]),
                          variant=e.get("variant", "regular"), bias=e.get("bias", True),
                          count=e.get("count", 1), output_proj=e.get("output_proj", True))
                for e in d["layers"]
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed architecture spec: {exc}") from exc
        spec = cls(d.get("name", "custom"), layers)
        for layer in spec.layers:
            _validate_layer(layer)
        return spec


def load_arch_file(path: str | os.PathLike) -> ArchSpec:
    with open(path) as fh:
        return ArchSpec.from_dict(json.load(fh))


def _validate_layer(layer: LayerSpec) -> None:
    if layer.kind not in LAYER_KINDS:
        raise SpecError(f"unknown layer kind {layer.kind!r} in {layer.name}")
    need = {
        "attention": ("dim", "heads"),
        "mlp": ("dim", "hidden"),
        "embed": ("in_features", "dim"),
        "head": ("dim", "classes"),
        "other": ("params",),
    }[layer.kind]
    missing = [k for k in need if k not in layer.dims]
    if missing:
        raise SpecError(f"{layer.kind} layer {layer.name} missing dims {missing}")
    if layer.count < 0:
        raise SpecError(f"negative count in {layer.name}")
    if layer.kind == "attention":
        AttentionVariant.parse(layer.variant)


def _deit(name: str, dim: int, heads: int, depth: int = 12, image: int = 224,
          patch: int = 16, classes: int = 1000) -> ArchSpec:
    tokens = (image // patch) ** 2
    return ArchSpec(name, (
        LayerSpec("embed", "patch_embed", {"in_features": 3 * patch * patch, "dim": dim,
                                           "positions": tokens + 1, "extra_tokens": 1}),
        LayerSpec("other", "norm1", {"params": 2 * dim}, count=depth),
        LayerSpec("attention", "attn", {"dim": dim, "heads": heads}, count=depth),
        LayerSpec("other", "norm2", {"params": 2 * dim}, count=depth),
        LayerSpec("mlp", "mlp", {"dim": dim, "hidden": 4 * dim}, count=depth),
        LayerSpec("other", "norm", {"params": 2 * dim}),
        LayerSpec("head", "head", {"dim": dim, "classes": classes}),
    ))


BUILTIN_ARCHS: dict[str, ArchSpec] = {
    "deit-ti": _deit("deit-ti", 192, 3),
    "deit-s": _deit("deit-s", 384, 6),
    "deit-b": _deit("deit-b", 768, 12),
}


def get_arch(name: str) -> ArchSpec:
    try:
        return BUILTIN_ARCHS[name.lower()]
    except KeyError:
        raise SpecError(f"unknown architecture {name!r}; built-ins: {', '.join(BUILTIN_ARCHS)}") from None


def layer_param_count(layer: LayerSpec) -> int:
    """Parameters of a single instance of ``layer`` (ignores ``count``)."""
    _validate_layer(layer)
    d = layer.dims
    b = 1 if layer.bias else 0
    if layer.kind == "attention":
        cfg = AttentionConfig(layer.variant, 1, d["dim"], d["heads"], layer.bias, layer.output_proj)
        return attention_param_count(cfg)
    if layer.kind == "mlp":
        return d["dim"] * d["hidden"] + b * d["hidden"] + d["hidden"] * d["dim"] + b * d["dim"]
    if layer.kind == "embed":
        return (d["in_features"] * d["dim"] + b * d["dim"]
                + d.get("positions", 0) * d["dim"] + d.get("extra_tokens", 0) * d["dim"])
    if layer.kind == "head":
        return d["dim"] * d["classes"] + b * d["classes"]
    return int(d["params"])


def param_breakdown(spec: ArchSpec) -> list[dict]:
    rows = []
    for layer in spec.layers:
        each = layer_param_count(layer)
        rows.append({"name": layer.name, "kind": layer.kind, "variant": layer.variant if layer.kind == "attention" else "",
                     "count": layer.count, "each": each, "total": each * layer.count})
    return rows


def model_param_count(spec: ArchSpec) -> int:
    return sum(r["total"] for r in param_breakdown(spec))


@dataclass
class ParamCountReport:
    arch: str
    variant: str
    baseline_total: int
    total: int
    delta: int
    delta_pct: float
    breakdown: list[dict]
    kind: str = "paramcount"

    def to_dict(self) -> dict:
        return asdict(self)


def compare_param_counts(spec: ArchSpec, variant) -> ParamCountReport:
    """Parameter totals of ``spec`` with all attention swapped to ``variant``."""
    base = model_param_count(spec.with_variant(AttentionVariant.REGULAR))
    swapped = spec.with_variant(variant)
    total = model_param_count(swapped)
    return ParamCountReport(spec.name, AttentionVariant.parse(variant).value, base, total,
                            total - base, 100.0 * (total - base) / base, param_breakdown(swapped))


# --------------------------------------------------------------------------
# MAC accounting


@dataclass
class BlockMacs:
    name: str
    kind: str
    count: int
    projection_macs: int
    attention_macs: int
    output_macs: int = 0
    other_macs: int = 0

    @property
    def total(self) -> int:
        return self.projection_macs + self.attention_macs + self.output_macs + self.other_macs


@dataclass
class FlopReport:
    """Multiply-accumulate counts per layer entry (per single instance).

    ``projection_macs`` counts only the Q/K/V (or P_Q/P_K/P_V) projections,
    ``attention_macs`` the two attention matmuls.
    """

    arch: str
    seq_len: int
    blocks: list[BlockMacs]
    kind: str = "flops"

    @property
    def total(self) -> int:
        return sum(b.total * b.count for b in self.blocks)

    @property
    def projection_total(self) -> int:
        return sum(b.projection_macs * b.count for b in self.blocks)

    @property
    def attention_total(self) -> int:
        return sum(b.attention_macs * b.count for b in self.blocks)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "arch": self.arch, "seq_len": self.seq_len, "total": self.total,
                "projection_total": self.projection_total, "attention_total": self.attention_total,
                "blocks": [{**asdict(b), "total": b.total} for b in self.blocks]}


def _n_qkv_projections(variant: str) -> int:
    return 3 - len({"regular": (), "armour": "v", "qk_shared": "k", "qk_shared_diag": "k",
                    "kv_shared": "v"}[AttentionVariant.parse(variant).value])


def model_flop_count(spec: ArchSpec, seq_len: int) -> FlopReport:
    L = seq_len
    blocks = []
    for layer in spec.layers:
        _validate_layer(layer)
        d = layer.dims
        if layer.kind == "attention":
            dim = d["dim"]
            blocks.append(BlockMacs(
                layer.name, "attention", layer.count,
                projection_macs=_n_qkv_projections(layer.variant) * L * dim * dim,
                attention_macs=2 * L * L * dim,
                output_macs=L * dim * dim if layer.output_proj else 0,
            ))
        elif layer.kind == "mlp":
            blocks.append(BlockMacs(layer.name, "mlp", layer.count, 0, 0,
                                    other_macs=2 * L * d["dim"] * d["hidden"]))
        elif layer.kind == "embed":
            patches = d.get("positions", L) - d.get("extra_tokens", 0)
            blocks.append(BlockMacs(layer.name, "embed", layer.count, 0, 0,
                                    other_macs=patches * d["in_features"] * d["dim"]))
        elif layer.kind == "head":
            blocks.append(BlockMacs(layer.name, "head", layer.count, 0, 0,
                                    other_macs=d["dim"] * d["classes"]))
        else:
            blocks.append(BlockMacs(layer.name, "other", layer.count, 0, 0))
    return FlopReport(spec.name, L, blocks)


def attention_arch(cfg: AttentionConfig) -> ArchSpec:
    """Single-layer spec describing one attention block, for MAC accounting."""
    return ArchSpec(f"attention[{cfg.variant.value}]", (
        LayerSpec("attention", "attn", {"dim": cfg.model_dim, "heads": cfg.heads},
                  variant=cfg.variant.value, bias=cfg.use_bias, output_proj=cfg.include_output_proj),
    ))


def levit_block_macs(cfg: LevitBlockConfig) -> FlopReport:
    hw, c, nd = cfg.tokens, cfg.in_channels, cfg.heads * cfg.key_dim
    proj = hw * c * (2 * nd + cfg.v_proj_width)
    attn = cfg.heads * (hw * hw * cfg.key_dim + hw * hw * cfg.value_width)
    out = hw * cfg.heads * cfg.value_width * c
    return FlopReport(f"levit[{cfg.variant.value}]", hw,
                      [BlockMacs("block", "attention", 1, proj, attn, out)])
