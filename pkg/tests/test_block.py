import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from memmamba.block import (CONV1D, ELEMENTWISE, FUSIONS, GATED, RESIDUAL, WEIGHTED, LayerState, attend,
                            cross_layer_attention, cross_token_attention, fuse, layer_forward)
from memmamba.errors import DimensionError, ParameterError
from memmamba.model import ModelConfig, init_weights, layer_weights
from memmamba.notes import (FIFO, PRIORITY, StatePool, StateSummary, pool_insert, state_importance,
                            summarize, token_importance, window_pool)


def summary(score, vec=(0.0,), step=0):
    return StateSummary(np.array(vec, dtype=float), 1, step, score)


def test_token_importance_examples(rng):
    x = rng.standard_normal(5)
    assert token_importance(x, np.zeros(5), [0.0]) == 0.5
    assert token_importance(x, np.zeros(5), [800.0]) == 1.0
    w, b = rng.standard_normal(5), rng.standard_normal(1)
    assert abs(token_importance(x, w, b) - 1 / (1 + np.exp(-(w @ x + b[0])))) < 1e-12
    with pytest.raises(DimensionError):
        token_importance(x, np.zeros(4), [0.0])


@given(st.floats(-30, 30), st.floats(0.01, 5))
def test_state_importance_monotone(logit, step):
    z = np.array([1.0])
    lo = state_importance(z, np.array([logit]), [0.0])
    hi = state_importance(z, np.array([logit + step]), [0.0])
    assert hi >= lo and 0.0 <= lo <= 1.0


def test_summarize_examples(rng):
    x = rng.standard_normal(6)
    assert np.array_equal(summarize(x, np.eye(4, 6)), x[:4])
    P = rng.standard_normal((3, 6))
    assert np.array_equal(summarize(np.zeros(6), P), np.zeros(3))
    assert np.allclose(summarize(2 * x, P), 2 * summarize(x, P), atol=1e-12)
    with pytest.raises(DimensionError):
        summarize(x, np.ones((3, 5)))


def test_window_pool():
    buf = [np.array([1.0, 5.0]), np.array([3.0, 2.0])]
    assert np.array_equal(window_pool(buf, "max"), [3.0, 5.0])
    assert np.array_equal(window_pool(buf, "mean"), [2.0, 3.5])
    with pytest.raises(ParameterError):
        window_pool(buf, "median")


def test_fifo_queue_semantics():
    pool = StatePool(2, FIFO)
    for i, s in enumerate([0.1, 0.2, 0.3]):
        pool = pool_insert(pool, summary(s, step=i))
    assert [e.step for e in pool.entries] == [1, 2]


def test_priority_rejects_lowest_incoming():
    pool = StatePool(2, PRIORITY)
    pool = pool_insert(pool_insert(pool, summary(0.9)), summary(0.8))
    assert pool_insert(pool, summary(0.5)) is pool


def test_priority_evicts_lowest():
    pool = StatePool(2, PRIORITY)
    pool = pool_insert(pool_insert(pool, summary(0.9)), summary(0.5))
    assert sorted(pool_insert(pool, summary(0.8)).scores) == [0.8, 0.9]


def test_priority_ties_keep_insertion_order():
    pool = StatePool(3, PRIORITY)
    for i, s in enumerate([0.6, 0.6, 0.9]):
        pool = pool_insert(pool, summary(s, step=i))
    pool = pool_insert(pool, summary(0.7, step=3))
    assert [e.step for e in pool.entries] == [0, 2, 3]


def test_pool_validation():
    with pytest.raises(ParameterError):
        StatePool(0)
    with pytest.raises(ParameterError):
        StatePool(3, "lru")
    pool = pool_insert(StatePool(3), summary(0.5, (1.0, 2.0)))
    with pytest.raises(DimensionError):
        pool_insert(pool, summary(0.5, (1.0,)))


@given(st.sampled_from([FIFO, PRIORITY]), st.integers(1, 6),
       st.lists(st.floats(0, 1), min_size=0, max_size=40))
def test_pool_capacity_never_exceeded(policy, cap, scores):
    pool = StatePool(cap, policy)
    for i, s in enumerate(scores):
        new = pool_insert(pool, summary(s, step=i))
        assert len(new) <= cap
        if policy == FIFO or len(pool) < cap or s > min(pool.scores):
            assert new.entries[-1].step == i
        pool = new
    assert len(pool) == min(cap, len(scores)) or policy == PRIORITY


def make_attn(rng, d=4, dm=3, da=5):
    return rng.standard_normal((da, d)), rng.standard_normal((da, dm)), rng.standard_normal((d, dm))


def test_attention_empty_single_and_duplicate(rng):
    Wq, Wk, Wv = make_attn(rng)
    x = rng.standard_normal(4)
    assert np.array_equal(cross_token_attention(x, StatePool(5), Wq, Wk, Wv), np.zeros(4))
    s = rng.standard_normal(3)
    one = pool_insert(StatePool(5), StateSummary(s, 1, 0, 0.9))
    assert np.allclose(cross_token_attention(x, one, Wq, Wk, Wv), Wv @ s, atol=1e-14)
    two = pool_insert(one, StateSummary(s.copy(), 1, 1, 0.9))
    assert np.allclose(cross_token_attention(x, two, Wq, Wk, Wv), Wv @ s, atol=1e-14)


def test_cross_layer_reductions(rng):
    Wq, Wk, Wv = make_attn(rng)
    x = rng.standard_normal(4)
    assert np.array_equal(cross_layer_attention(x, [StatePool(3), StatePool(3)], Wq, Wk, Wv), np.zeros(4))
    pool = StatePool(3)
    for i in range(3):
        pool = pool_insert(pool, StateSummary(rng.standard_normal(3), 1, i, 0.9))
    assert np.array_equal(cross_layer_attention(x, [pool], Wq, Wk, Wv),
                          cross_token_attention(x, pool, Wq, Wk, Wv))


def test_cross_layer_two_pools_by_hand(rng):
    Wq, Wk, Wv = make_attn(rng)
    x = rng.standard_normal(4)
    s1, s2 = rng.standard_normal(3), rng.standard_normal(3)
    p1 = pool_insert(StatePool(2), StateSummary(s1, 1, 0, 0.9))
    p2 = pool_insert(StatePool(2), StateSummary(s2, 2, 0, 0.9))
    q = Wq @ x
    l1, l2 = q @ (Wk @ s1) / np.sqrt(5), q @ (Wk @ s2) / np.sqrt(5)
    w1 = 1 / (1 + np.exp(l2 - l1))
    expected = w1 * (Wv @ s1) + (1 - w1) * (Wv @ s2)
    assert np.max(np.abs(cross_layer_attention(x, [p1, p2], Wq, Wk, Wv) - expected)) < 1e-12


@given(st.integers(0, 2**31), st.integers(1, 8))
def test_attention_weights_sum_to_one(seed, m):
    r = np.random.default_rng(seed)
    Wq, Wk, Wv = make_attn(r)
    _, w = attend(r.standard_normal(4), r.standard_normal((m, 3)) * 10, Wq, Wk, Wv)
    assert abs(w.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("method", FUSIONS)
def test_fuse_zero_context_identity(method, rng):
    x = rng.standard_normal(6)
    params = {"gate_tok": rng.standard_normal(6), "conv_tok": rng.standard_normal((6, 6))}
    assert np.array_equal(fuse(x, np.zeros(6), np.zeros(6), method, params), x)


def test_fuse_examples(rng):
    x, ct, cl = rng.standard_normal((3, 5))
    one = {"alpha_tok": 1.0, "alpha_lay": 1.0}
    assert np.array_equal(fuse(x, ct, cl, WEIGHTED, one), fuse(x, ct, cl, RESIDUAL))
    assert np.allclose(fuse(x, ct, np.zeros(5), WEIGHTED), x + 0.8 * ct, atol=1e-15)
    g = rng.standard_normal(5)
    assert np.allclose(fuse(x, ct, cl, GATED, {"gate_tok": g, "gate_lay": -g}),
                       x + expit(g) * ct + expit(-g) * cl)
    assert np.allclose(fuse(x, ct, cl, ELEMENTWISE), x * (1 + ct + cl))
    K = rng.standard_normal((5, 5))
    assert np.allclose(fuse(x, ct, cl, CONV1D, {"conv_tok": K, "conv_lay": K.T}), x + K @ ct + K.T @ cl)
    with pytest.raises(ParameterError):
        fuse(x, ct, cl, "sum")
    with pytest.raises(DimensionError):
        fuse(x, ct[:4], cl, WEIGHTED)


def layer_setup(rng, layer=1, **kw):
    cfg = ModelConfig(L=max(layer, 1), d=6, d_s=4, d_sum=5, vocab=16, **kw)
    w = layer_weights(init_weights(cfg, 7), layer - 1)
    return cfg, LayerState.initial(cfg, layer, w)


def test_layer_never_triggering_is_plain_ssm(rng):
    cfg, state = layer_setup(rng, tau1=1.1, tau2=1.1)
    h = np.zeros(4)
    for _ in range(10):
        x = rng.standard_normal(6)
        z, state = layer_forward(cfg, state, x)
        h = state.ssm.A_diag * h + state.ssm.B @ x
        y = state.ssm.C @ h
        assert np.array_equal(z, x + y * expit(y))
        assert len(state.pool) == 0


def test_layer_always_inserting_counts(rng):
    cfg, state = layer_setup(rng, tau1=-1.0, pool_capacity=4, pool_policy=FIFO)
    for t in range(1, 9):
        _, state = layer_forward(cfg, state, rng.standard_normal(6))
        assert len(state.pool) == min(t, 4)


def test_layer_without_trigger_has_zero_layer_context(rng):
    cfg, state = layer_setup(rng, layer=1, tau1=-1.0, tau2=-1.0, p=4)
    full = pool_insert(StatePool(5), StateSummary(rng.standard_normal(5), 1, 0, 0.9))
    for _ in range(5):
        _, state = layer_forward(cfg, state, rng.standard_normal(6), [full])
        assert np.array_equal(state.info.c_layer, np.zeros(6))


def test_cross_token_reads_pool_before_insertion(rng):
    cfg, state = layer_setup(rng, tau1=-1.0, tau2=-1.0)
    _, state = layer_forward(cfg, state, rng.standard_normal(6))
    assert np.array_equal(state.info.c_token, np.zeros(6))
    assert len(state.pool) == 1
