"""Compact self-attention (Q reused as V) with weight-sharing ablations,
LeViT-style block variants, parameter/MAC accounting and a numpy autodiff core."""

from .attention import (
    AttentionConfig,
    AttentionVariant,
    AttentionWeights,
    armour_attention,
    attention,
    attention_probabilities,
    init_weights,
    kv_shared_attention,
    qk_shared_attention,
    regular_attention,
)
from .levit import LevitBlockConfig, LevitBlockWeights, LevitVariant, levit_block_forward
from .tensor_core import GradTape, Tensor, backward, finite_diff_grad

__all__ = [
    "AttentionConfig", "AttentionVariant", "AttentionWeights", "GradTape",
    "LevitBlockConfig", "LevitBlockWeights", "LevitVariant", "Tensor",
    "armour_attention", "attention", "attention_probabilities", "backward",
    "finite_diff_grad", "init_weights", "kv_shared_attention", "levit_block_forward",
    "qk_shared_attention", "regular_attention",
]
