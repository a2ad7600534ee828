import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from armour.attention import StrictWeightsError
from armour.gradcheck import check_levit
from armour.levit import (
    LevitBlockConfig,
    LevitBlockWeights,
    LevitVariant,
    block_param_count,
    block_param_savings,
    expected_shapes,
    init_block_weights,
    levit_block_forward,
    levit_block_probabilities,
    tie_half_v_to_baseline,
)
from armour.tensor_core import DimensionError, Tensor

LV = LevitVariant
ALL = list(LevitVariant)


def setup(variant, N=2, D=2, H=2, W=2, C=4, seed=0, bias=True):
    cfg = LevitBlockConfig(variant, N, D, H, W, C, use_bias=bias)
    rng = np.random.default_rng(seed)
    w = init_block_weights(cfg, rng)
    x = Tensor(rng.standard_normal((cfg.tokens, C)))
    return cfg, w, x


def test_projection_shapes():
    cfg = LevitBlockConfig(LV.BASELINE, heads=4, key_dim=16, height=7, width=7, in_channels=128)
    s = expected_shapes(cfg)
    assert s["p_q"] == s["p_k"] == (128, 64)
    assert s["p_v"] == (128, 128)
    assert s["p_o"] == (128, 128)
    assert expected_shapes(cfg.with_variant(LV.HALF_V_CONCAT_Q))["p_v"] == (128, 64)
    assert "p_v" not in expected_shapes(cfg.with_variant(LV.QK_REPLACES_V))


@pytest.mark.parametrize("variant", ALL)
def test_value_width_is_twice_key_dim(variant):
    assert LevitBlockConfig(variant, key_dim=5).value_width == 10


@pytest.mark.parametrize("variant", ALL)
def test_single_token_output(variant):
    cfg, w, x = setup(variant, N=2, D=3, H=1, W=1, C=4)
    assert levit_block_probabilities(x, w, cfg).data.tolist() == [[[1.0]], [[1.0]]]
    q = x.data @ w.p_q.data + w.b_q.data
    k = x.data @ w.p_k.data + w.b_k.data
    D = 3
    rows = []
    for n in range(2):
        qn, kn = q[:, n * D:(n + 1) * D], k[:, n * D:(n + 1) * D]
        if variant is LV.BASELINE:
            v = x.data @ w.p_v.data + w.b_v.data
            rows.append(v[:, n * 2 * D:(n + 1) * 2 * D])
        elif variant is LV.HALF_V_CONCAT_Q:
            v = x.data @ w.p_v.data + w.b_v.data
            rows.append(np.concatenate([v[:, n * D:(n + 1) * D], qn], axis=1))
        else:
            rows.append(np.concatenate([qn, kn], axis=1))
    expected = np.concatenate(rows, axis=1) @ w.p_o.data + w.b_o.data
    assert np.allclose(levit_block_forward(x, w, cfg).data, expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("variant", ALL)
@pytest.mark.parametrize("H,W", [(1, 1), (1, 2), (1, 3), (2, 2)])
@pytest.mark.parametrize("N,D", [(1, 2), (2, 2), (2, 4)])
def test_oracle_equivalence(variant, H, W, N, D):
    cfg, w, x = setup(variant, N=N, D=D, H=H, W=W, C=4, seed=H * 31 + W * 7 + N * 3 + D)
    ref = oracles.levit_block(x.data, variant.value, N, D, {k: t.data for k, t in w.tensors().items()})
    assert oracles.max_abs_diff(levit_block_forward(x, w, cfg).data, ref) < 1e-10


@pytest.mark.parametrize("variant", ALL)
def test_output_shape(variant):
    cfg, w, x = setup(variant, N=3, D=2, H=3, W=2, C=5)
    assert levit_block_forward(x, w, cfg).shape == (6, 5)


@pytest.mark.parametrize("bias", [True, False])
def test_tied_baseline_reproduces_half_v(bias):
    cfg, w, x = setup(LV.HALF_V_CONCAT_Q, N=3, D=4, H=2, W=3, C=8, seed=4, bias=bias)
    tied = tie_half_v_to_baseline(w, cfg)
    base = levit_block_forward(x, tied, cfg.with_variant(LV.BASELINE)).data
    assert np.array_equal(levit_block_forward(x, w, cfg).data, base)


@pytest.mark.parametrize("variant", ALL)
def test_gradients(variant):
    rep = check_levit(LevitBlockConfig(variant, 2, 2, 2, 2, 4), seed=3)
    assert rep.passed, rep.errors


@pytest.mark.parametrize("variant", ALL)
def test_probability_rows_sum_to_one(variant):
    cfg, w, x = setup(variant, H=3, W=3)
    p = levit_block_probabilities(x, w, cfg).data
    assert np.allclose(p.sum(-1), 1.0, rtol=0, atol=1e-12)


@given(variant=st.sampled_from(ALL), seed=st.integers(0, 2**16), perm_seed=st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_token_permutation_equivariance(variant, seed, perm_seed):
    cfg, w, x = setup(variant, H=2, W=3, seed=seed)
    perm = np.random.default_rng(perm_seed).permutation(cfg.tokens)
    out = levit_block_forward(x, w, cfg).data
    assert np.allclose(levit_block_forward(Tensor(x.data[perm]), w, cfg).data, out[perm],
                       rtol=0, atol=1e-12)


def test_param_count_arithmetic():
    cfg = LevitBlockConfig(LV.BASELINE, heads=4, key_dim=16, in_channels=128, use_bias=False)
    assert expected_shapes(cfg)["p_v"] == (128, 128)
    assert 128 * 128 == 16384
    assert block_param_savings(cfg.with_variant(LV.HALF_V_CONCAT_Q)) == 8192


@given(N=st.integers(1, 8), D=st.integers(1, 32), C=st.integers(1, 256), bias=st.booleans())
def test_savings_formulas(N, D, C, bias):
    cfg = LevitBlockConfig(LV.BASELINE, N, D, 2, 2, C, use_bias=bias)
    half = block_param_savings(cfg.with_variant(LV.HALF_V_CONCAT_Q))
    full = block_param_savings(cfg.with_variant(LV.QK_REPLACES_V))
    assert half == C * N * D + (N * D if bias else 0)
    assert full == 2 * C * N * D + (2 * N * D if bias else 0)
    assert full == 2 * half
    assert block_param_count(cfg) - full == block_param_count(cfg.with_variant(LV.QK_REPLACES_V))


def test_constructed_census_matches_formula():
    for variant in ALL:
        cfg, w, _ = setup(variant, N=4, D=3, C=10)
        assert sum(t.size for t in w.tensors().values()) == block_param_count(cfg)


def test_strict_census_and_container_names():
    cfg, w, x = setup(LV.QK_REPLACES_V)
    named = w.to_named()
    assert sorted(named) == ["block.b_k", "block.b_o", "block.b_q", "block.p_k", "block.p_o", "block.p_q"]
    back = LevitBlockWeights.from_named(named, cfg)
    assert np.array_equal(levit_block_forward(x, back, cfg).data, levit_block_forward(x, w, cfg).data)
    with pytest.raises(StrictWeightsError):
        LevitBlockWeights.from_named(named, cfg.with_variant(LV.BASELINE))


def test_input_shape_checked():
    cfg, w, _ = setup(LV.BASELINE, H=2, W=2, C=4)
    with pytest.raises(DimensionError):
        levit_block_forward(Tensor(np.zeros((5, 4))), w, cfg)
