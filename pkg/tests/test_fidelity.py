import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memmamba.errors import DimensionError, ParameterError
from memmamba.fidelity import (FidelityReport, eclmf, eclmf_pair, etmf, etmf_delta, fidelity_report,
                               reconstructions, rows_to_csv)
from memmamba.model import LayerTrace, ModelConfig, init_weights, model_forward


def trace_of(hidden, tokens, mask=None):
    return LayerTrace(np.asarray(hidden, float), np.asarray(tokens), mask)


def test_single_token_vocab_is_perfect(rng):
    E = rng.standard_normal((1, 4))
    tr = trace_of(rng.standard_normal((2, 5, 4)), np.zeros(5, int))
    assert etmf(tr, E, rng.standard_normal((1, 4))) == pytest.approx(1.0, abs=1e-14)


def test_sharp_one_hot_readout_is_perfect():
    E = np.eye(4)
    tokens = np.array([2, 0, 3, 1, 1])
    hidden = np.stack([np.zeros((5, 4)), E[tokens]])
    assert etmf(trace_of(hidden, tokens), E, 800.0 * E) == pytest.approx(1.0, abs=1e-12)


def test_two_token_hand_case():
    # logits (0, ln 3) give p = (1/4, 3/4)
    E = np.array([[1.0, 0.0], [0.0, 1.0]])
    W = np.array([[0.0, 0.0], [0.0, np.log(3.0)]])
    hidden = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    tr = trace_of(hidden, np.array([0, 1]))
    t, t_hat, _ = reconstructions(tr, E, W)
    assert np.allclose(t_hat, [[[0.25, 0.75], [0.25, 0.75]]], atol=1e-15)
    c = 1 / np.sqrt(0.25**2 + 0.75**2)
    assert etmf(tr, E, W) == pytest.approx((0.25 * c + 0.75 * c) / 2, abs=1e-14)


def double_loop_etmf_delta(hidden_top, tokens, E, W, delta):
    total, count = 0.0, 0
    n = len(tokens)
    for i in range(n - delta):
        z = W @ hidden_top[i + delta]
        p = np.exp(z - z.max())
        p /= p.sum()
        rec = sum(p[v] * E[v] for v in range(len(E)))
        t = E[tokens[i]]
        total += t @ rec / (np.linalg.norm(t) * np.linalg.norm(rec))
        count += 1
    return total / count


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(0, 5))
def test_etmf_delta_matches_double_loop(seed, delta):
    r = np.random.default_rng(seed)
    V, d, n = 6, 3, 8
    E, W = r.standard_normal((V, d)), r.standard_normal((V, d))
    hidden = r.standard_normal((2, n, d))
    tokens = r.integers(0, V, n)
    got = etmf_delta(trace_of(hidden, tokens), E, W, delta)
    assert got == pytest.approx(double_loop_etmf_delta(hidden[-1], tokens, E, W, delta), abs=1e-12)


def test_delta_zero_is_plain_etmf(rng):
    tr = trace_of(rng.standard_normal((2, 9, 3)), rng.integers(0, 5, 9))
    E, W = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    assert etmf_delta(tr, E, W, 0) == etmf(tr, E, W)


def test_constant_sequence_is_shift_invariant(rng):
    E, W = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    hidden = np.repeat(rng.standard_normal((2, 1, 3)), 10, axis=1)
    tr = trace_of(hidden, np.full(10, 3))
    assert etmf_delta(tr, E, W, 4) == pytest.approx(etmf(tr, E, W), abs=1e-14)


def test_etmf_errors(rng):
    tr = trace_of(rng.standard_normal((2, 4, 3)), np.zeros(4, int))
    with pytest.raises(ParameterError):
        etmf_delta(tr, np.eye(3), np.eye(3), 4)
    with pytest.raises(DimensionError):
        etmf(tr, np.eye(4), np.eye(4))


def test_mask_excludes_padding(rng):
    E, W = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    hidden = rng.standard_normal((1, 2, 6, 3))
    tokens = rng.integers(0, 5, (1, 6))
    mask = np.array([[True] * 4 + [False] * 2])
    full = etmf(trace_of(hidden, tokens, mask), E, W)
    short = etmf(trace_of(hidden[:, :, :4], tokens[:, :4]), E, W)
    assert full == pytest.approx(short, abs=1e-15)


def test_eclmf_identity_and_zero_target(rng):
    X = rng.standard_normal((50, 4))
    assert eclmf_pair(X, X, lam=0.0) == pytest.approx(1.0, abs=1e-9)
    assert eclmf_pair(X, np.zeros((50, 4))) == pytest.approx(1.0, abs=1e-12)


def test_eclmf_planted_linear_map(rng):
    X = rng.standard_normal((200, 5))
    M = rng.standard_normal((5, 5))
    noise = 0.1 * rng.standard_normal((200, 5))
    Y = X @ M + noise
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    expected = 1 - np.linalg.norm(Y - X @ W) / (np.linalg.norm(X) + 1e-6)
    assert eclmf_pair(X, Y, lam=0.0) == pytest.approx(expected, abs=1e-10)


def test_eclmf_invariant_to_row_permutation(rng):
    X, Y = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
    perm = rng.permutation(40)
    assert eclmf_pair(X[perm], Y[perm]) == pytest.approx(eclmf_pair(X, Y), abs=1e-12)


def test_eclmf_decreases_with_noise(rng):
    X = rng.standard_normal((300, 4))
    M = rng.standard_normal((4, 4))
    noise = rng.standard_normal((300, 4))
    scores = [eclmf_pair(X, X @ M + s * noise) for s in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_eclmf_over_layers(rng):
    hidden = rng.standard_normal((4, 10, 3))
    tr = trace_of(hidden, np.zeros(10, int))
    want = np.mean([eclmf_pair(hidden[l], hidden[l + 2]) for l in range(2)])
    assert eclmf(tr, 2) == pytest.approx(want, abs=1e-15)
    with pytest.raises(ParameterError):
        eclmf(tr, 4)
    with pytest.raises(ParameterError):
        eclmf(tr, 0)


def test_report_on_model_trace(tmp_path):
    cfg = ModelConfig(L=3, d=8, d_s=4, d_sum=4, vocab=16)
    w = init_weights(cfg)
    _, tr = model_forward(cfg, w, np.arange(20) % 16)
    rep = fidelity_report(tr, w["embed"], w["out_w"], deltas=(2, 8, 40), gaps=(1, 2, 5), bias=w["out_b"])
    assert set(rep.etmf_delta) == {2, 8} and set(rep.eclmf) == {1, 2}
    assert -1 <= rep.etmf <= 1 and rep.sample_count == 20
    assert rep.mean_eclmf == pytest.approx((rep.eclmf[1] + rep.eclmf[2]) / 2)
    rows = rep.rows("m")
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "model_id,metric,delta_or_gap,value" and len(text.splitlines()) == 6
    assert "etmf_delta" in rep.to_json()
    assert np.isnan(FidelityReport(0.5).mean_eclmf)
