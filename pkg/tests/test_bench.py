import numpy as np
import pytest
from hypothesis import given, strategies as st

from memmamba.bench import (MEMMAMBA, QUADRATIC_BASELINE, BenchRecord, benchmark_forward, fit_scaling_exponent,
                            full_attention, peak_bytes, records_to_csv, records_to_long_csv)
from memmamba.errors import ParameterError
from memmamba.model import ModelConfig
from memmamba.numerics import softmax

SMALL = ModelConfig(L=1, d=8, d_s=4, d_sum=4, vocab=16)


def planted(exponent, lengths=(64, 128, 256, 512, 1024), c=0.01):
    return [BenchRecord("x", n, c * n ** exponent, 0, 1) for n in lengths]


@given(st.floats(0.2, 3.0), st.floats(1e-4, 10.0))
def test_fit_recovers_planted_exponent(k, c):
    assert fit_scaling_exponent(planted(k, c=c)) == pytest.approx(k, abs=1e-9)


def test_fit_needs_four_lengths():
    with pytest.raises(ParameterError):
        fit_scaling_exponent(planted(1.0, (8, 16, 32)))


def test_full_attention_matches_dense_softmax(rng):
    X = rng.standard_normal((37, 6))
    Wq, Wk, Wv = (rng.standard_normal((6, 6)) for _ in range(3))
    Q, K, V = X @ Wq.T, X @ Wk.T, X @ Wv.T
    want = softmax(Q @ K.T / np.sqrt(6)) @ V
    assert np.allclose(full_attention(X, Wq, Wk, Wv, block=8), want, atol=1e-12)


def test_benchmark_records_and_validation():
    recs = benchmark_forward(MEMMAMBA, [16, 32], samples=2, cfg=SMALL)
    assert [r.seq_len for r in recs] == [16, 32]
    assert all(r.wall_ms > 0 and r.samples == 2 and len(r.times_ms) == 2 for r in recs)
    assert all(r.peak_state_bytes > 0 for r in recs)
    with pytest.raises(ParameterError):
        benchmark_forward(MEMMAMBA, [32, 16], cfg=SMALL)
    with pytest.raises(ParameterError):
        benchmark_forward("transformer", [16], cfg=SMALL)
    with pytest.raises(ParameterError):
        BenchRecord("x", 4, 0.0, 0, 1)


def test_memmamba_time_roughly_doubles_with_length():
    recs = benchmark_forward(MEMMAMBA, [128, 256, 512], samples=3, cfg=SMALL, measure_memory=False)
    ratios = [b.wall_ms / a.wall_ms for a, b in zip(recs, recs[1:])]
    assert all(1.3 < r < 3.2 for r in ratios), ratios


def test_peak_bytes_tracks_allocation():
    small = peak_bytes(lambda: np.ones(1000))
    big = peak_bytes(lambda: np.ones(100_000))
    assert big >= 800_000 > 10 * small


def test_quadratic_baseline_memory_is_linear_per_block():
    recs = benchmark_forward(QUADRATIC_BASELINE, [512, 1024], samples=1, cfg=SMALL)
    assert recs[1].peak_state_bytes < 4 * recs[0].peak_state_bytes


def test_csv_exports():
    recs = [BenchRecord("m", 8, 1.5, 10, 2, 1, (1.0, 2.0))]
    assert records_to_csv(recs).splitlines() == [
        "model_id,seq_len,wall_ms_median,peak_state_bytes,samples,repeats", "m,8,1.5,10,2,1"]
    assert records_to_long_csv(recs).splitlines()[1:] == ["m,8,0,1.0", "m,8,1,2.0"]
