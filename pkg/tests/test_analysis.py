import csv
import json
import os
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from armour.analysis import (
    BUILTIN_ARCHS,
    DEFAULT_EPSILON,
    ArchSpec,
    LayerSpec,
    SpecError,
    attention_arch,
    compare_param_counts,
    get_arch,
    levit_block_macs,
    load_arch_file,
    model_flop_count,
    model_param_count,
    redundancy,
    redundancy_over_layers,
)
from armour.attention import AttentionConfig, AttentionVariant
from armour.tensor_core import DimensionError

DATA = os.path.join(os.path.dirname(__file__), "data")


def oracle_totals():
    totals = defaultdict(int)
    with open(os.path.join(DATA, "deit_param_oracle.csv")) as fh:
        for row in csv.DictReader(fh):
            totals[row["arch"], row["variant"]] += int(row["count"]) * int(row["each"])
    return totals


# --- redundancy -----------------------------------------------------------

def test_identical_inputs_fully_redundant():
    a = np.random.default_rng(0).standard_normal((8, 8))
    assert redundancy(a, a).fraction_below == 1.0


def test_hand_counted_fraction():
    r = redundancy([0, 0, 1, 1], [0.005, 0.5, 1.005, 2], 0.01)
    assert r.fraction_below == 0.5
    assert (r.below_count, r.element_count) == (2, 4)


def test_default_epsilon():
    assert DEFAULT_EPSILON == 1e-2
    assert redundancy([0.0], [0.0]).epsilon == 1e-2


def test_threshold_is_strict():
    assert redundancy([0.0], [0.5], epsilon=0.5).fraction_below == 0.0


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        redundancy(np.zeros(3), np.zeros(4))


pairs = st.integers(1, 20).flatmap(lambda n: st.tuples(
    npst.arrays(np.float64, n, elements=st.floats(-1, 1)),
    npst.arrays(np.float64, n, elements=st.floats(-1, 1))))


@given(pairs, st.floats(1e-4, 1.0))
def test_symmetric(ab, eps):
    a, b = ab
    assert redundancy(a, b, eps).fraction_below == redundancy(b, a, eps).fraction_below


@given(pairs, st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_monotone_in_epsilon(ab, e1, e2):
    a, b = ab
    lo, hi = sorted((e1, e2))
    assert redundancy(a, b, lo).fraction_below <= redundancy(b, a, hi).fraction_below


@given(pairs, st.floats(1e-3, 0.5))
def test_zero_when_every_gap_exceeds_epsilon(ab, eps):
    a, _ = ab
    assert redundancy(a, a + 2 * eps, eps).fraction_below == 0.0


def test_redundancy_over_layers_modes():
    rng = np.random.default_rng(0)
    wq = rng.uniform(-0.02, 0.02, (4, 4))
    named = {"layer0.w_q": wq, "layer0.w_k": wq.copy(), "layer0.w_v": wq + 1.0,
             "layer1.w_q": wq, "layer1.w_k": wq + 1.0}
    r = redundancy_over_layers(named, ("wq", "wk"))
    assert r.pair == "wq_wk"
    assert r.fraction_below == 0.5
    assert [e["layer"] for e in r.per_layer] == ["layer0", "layer1"]
    ph = redundancy_over_layers(named, ("wq", "wk"), mode="per_head", heads=2)
    assert ph.fraction_below == r.fraction_below
    assert ph.per_layer[0]["heads"] == [1.0, 1.0]
    # a layer missing the partner is skipped
    assert redundancy_over_layers(named, ("wq", "wv")).element_count == 16
    normed = redundancy_over_layers(named, ("wq", "wk"), normalize=True)
    assert normed.per_layer[0]["fraction_below"] == 1.0
    with pytest.raises(SpecError):
        redundancy_over_layers(named, ("wk", "wo"))


# --- parameter accounting -------------------------------------------------

@pytest.mark.parametrize("arch", ["deit-ti", "deit-s", "deit-b"])
@pytest.mark.parametrize("variant", ["regular", "armour"])
def test_matches_committed_oracle(arch, variant):
    assert model_param_count(get_arch(arch).with_variant(variant)) == oracle_totals()[arch, variant]


@pytest.mark.parametrize("arch,d,target_pct", [("deit-ti", 192, -7.8), ("deit-s", 384, -8.1),
                                              ("deit-b", 768, -8.2)])
def test_armour_delta(arch, d, target_pct):
    r = compare_param_counts(get_arch(arch), "armour")
    assert -r.delta == 12 * (d * d + d)
    assert abs(r.delta_pct - target_pct) <= 0.1


def test_hand_savings():
    assert 12 * (192**2 + 192) == 444_672
    assert 12 * (384**2 + 384) == 1_774_080
    assert 12 * (768**2 + 768) == 7_087_104


@pytest.mark.parametrize("variant", [v for v in AttentionVariant if v is not AttentionVariant.REGULAR])
@pytest.mark.parametrize("arch", list(BUILTIN_ARCHS))
def test_shared_variants_strictly_smaller(arch, variant):
    spec = get_arch(arch)
    assert model_param_count(spec.with_variant(variant)) < model_param_count(spec)


def test_spec_without_attention_unchanged():
    spec = ArchSpec("mlp-only", (LayerSpec("mlp", "m", {"dim": 4, "hidden": 8}),))
    assert model_param_count(spec.with_variant("armour")) == model_param_count(spec) == 4 * 8 + 8 + 8 * 4 + 4


def test_unknown_kind_is_spec_error():
    with pytest.raises(SpecError):
        model_param_count(ArchSpec("bad", (LayerSpec("conv", "c", {"params": 1}),)))


def test_missing_dims_is_spec_error():
    with pytest.raises(SpecError):
        model_param_count(ArchSpec("bad", (LayerSpec("mlp", "m", {"dim": 4}),)))


def test_unknown_arch():
    with pytest.raises(SpecError):
        get_arch("vit-huge")


def test_arch_file_roundtrip(tmp_path):
    path = tmp_path / "arch.json"
    path.write_text(json.dumps(get_arch("deit-s").to_dict()))
    spec = load_arch_file(path)
    assert model_param_count(spec) == model_param_count(get_arch("deit-s"))


def test_arch_file_malformed(tmp_path):
    path = tmp_path / "arch.json"
    path.write_text(json.dumps({"layers": [{"dims": {}}]}))
    with pytest.raises(SpecError):
        load_arch_file(path)


# --- MAC accounting -------------------------------------------------------

@given(L=st.integers(1, 300), d=st.sampled_from([8, 64, 192, 384]))
def test_projection_and_attention_macs(L, d):
    cfg = AttentionConfig("regular", L, d, 1)
    reg = model_flop_count(attention_arch(cfg), L).blocks[0]
    arm = model_flop_count(attention_arch(cfg.with_variant("armour")), L).blocks[0]
    assert reg.projection_macs == 3 * L * d * d
    assert arm.projection_macs == 2 * L * d * d
    assert 3 * arm.projection_macs == 2 * reg.projection_macs
    assert reg.attention_macs == arm.attention_macs == 2 * L * L * d
    assert reg.projection_macs - arm.projection_macs == L * d * d


def test_deit_ti_projection_delta():
    reg = model_flop_count(get_arch("deit-ti"), 197)
    arm = model_flop_count(get_arch("deit-ti").with_variant("armour"), 197)
    (r_attn,) = [b for b in reg.blocks if b.kind == "attention"]
    (a_attn,) = [b for b in arm.blocks if b.kind == "attention"]
    assert r_attn.projection_macs - a_attn.projection_macs == 7_262_208
    assert reg.total - arm.total == 12 * 7_262_208


def test_levit_block_macs():
    from armour.levit import LevitBlockConfig
    cfg = LevitBlockConfig("baseline", heads=4, key_dim=16, height=7, width=7, in_channels=128)
    base = levit_block_macs(cfg).blocks[0]
    half = levit_block_macs(cfg.with_variant("half_v_concat_q")).blocks[0]
    full = levit_block_macs(cfg.with_variant("qk_replaces_v")).blocks[0]
    assert base.projection_macs == 49 * 128 * (64 + 64 + 128)
    assert base.projection_macs - half.projection_macs == 49 * 128 * 64
    assert base.projection_macs - full.projection_macs == 2 * 49 * 128 * 64
    assert base.attention_macs == half.attention_macs == full.attention_macs
