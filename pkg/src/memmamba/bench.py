"""Forward-pass latency and memory scaling: MemMamba against full attention."""

from __future__ import annotations

import csv
import io
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .batched import forward_batch
from .errors import ParameterError
from .model import ModelConfig, init_weights, rng_for

MEMMAMBA = "memmamba"
QUADRATIC_BASELINE = "quadratic_baseline"
KINDS = (MEMMAMBA, QUADRATIC_BASELINE)
DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)

# a timed call shorter than this is repeated inside one sample
MIN_SAMPLE_SECONDS = 2e-3


@dataclass(frozen=True)
class BenchRecord:
    model_id: str
    seq_len: int
    wall_ms: float            # median over samples, per forward call
    peak_state_bytes: int
    samples: int
    repeats: int = 1          # calls per sample (raised automatically for short calls)
    times_ms: tuple = ()

    def __post_init__(self):
        if not self.wall_ms > 0:
            raise ParameterError("wall_ms must be > 0")
        if self.samples < 1:
            raise ParameterError("samples must be >= 1")


def full_attention(X, Wq, Wk, Wv, block: int = 1024) -> np.ndarray:
    """Softmax self-attention over every pair of positions, computed in row
    blocks so the n x n score matrix is never held at once."""
    Q, K, V = X @ Wq.T, X @ Wk.T, X @ Wv.T
    scale = 1.0 / np.sqrt(Q.shape[1])
    out = np.empty((X.shape[0], V.shape[1]))
    for i in range(0, X.shape[0], block):
        S = (Q[i:i + block] @ K.T) * scale
        S -= S.max(axis=1, keepdims=True)
        np.exp(S, out=S)
        S /= S.sum(axis=1, keepdims=True)
        out[i:i + block] = S @ V
    return out


def _runner(kind: str, cfg: ModelConfig, seed: int):
    rng = rng_for(seed, "bench")
    if kind == MEMMAMBA:
        weights = init_weights(cfg, seed)

        def run(tokens):
            return forward_batch(cfg, weights, tokens[None]).logits.value
    elif kind == QUADRATIC_BASELINE:
        d = cfg.d
        embed = rng.standard_normal((cfg.vocab, d))
        Wq, Wk, Wv = (rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3))

        def run(tokens):
            return full_attention(embed[tokens], Wq, Wk, Wv)
    else:
        raise ParameterError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return run, rng


def peak_bytes(fn, *args) -> int:
    """Peak traced allocation while ``fn(*args)`` runs."""
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        fn(*args)
        return int(tracemalloc.get_traced_memory()[1])
    finally:
        tracemalloc.stop()


def benchmark_forward(model_kind: str, lengths=DEFAULT_LENGTHS, samples: int = 3,
                      cfg: ModelConfig | None = None, seed: int = 123, warmup: int = 1,
                      measure_memory: bool = True) -> list[BenchRecord]:
    """Median wall time of one forward pass per length.

    Memory is measured in a separate untraced-timing run.
    """
    lengths = list(lengths)
    if lengths != sorted(lengths) or len(set(lengths)) != len(lengths):
        raise ParameterError("lengths must be strictly ascending")
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    cfg = cfg or ModelConfig(seed=seed)
    run, rng = _runner(model_kind, cfg, seed)
    records = []
    for n in lengths:
        tokens = rng.integers(0, cfg.vocab, n)
        for _ in range(warmup):
            run(tokens)
        t0 = time.perf_counter()
        run(tokens)
        once = time.perf_counter() - t0
        repeats = max(1, int(np.ceil(MIN_SAMPLE_SECONDS / max(once, 1e-9))))
        times = []
        for _ in range(samples):
            t0 = time.perf_counter()
            for _ in range(repeats):
                run(tokens)
            times.append((time.perf_counter() - t0) * 1e3 / repeats)
        mem = peak_bytes(run, tokens) if measure_memory else 0
        records.append(BenchRecord(model_kind, n, float(np.median(times)), mem, samples,
                                   repeats, tuple(times)))
    return records


def fit_scaling_exponent(records) -> float:
    """Least-squares slope of log(wall_ms) against log(seq_len)."""
    n = np.array([r.seq_len for r in records], dtype=np.float64)
    t = np.array([r.wall_ms for r in records], dtype=np.float64)
    if len(np.unique(n)) < 4:
        raise ParameterError("need at least 4 distinct lengths to fit an exponent")
    slope, _ = np.polyfit(np.log(n), np.log(t), 1)
    return float(slope)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model_id", "seq_len", "wall_ms_median", "peak_state_bytes", "samples", "repeats"))
    for r in records:
        w.writerow((r.model_id, r.seq_len, repr(r.wall_ms), r.peak_state_bytes, r.samples, r.repeats))
    return buf.getvalue()


def records_to_long_csv(records) -> str:
    """One row per timed sample, ready for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model_id", "seq_len", "sample", "wall_ms"))
    for r in records:
        for i, ms in enumerate(r.times_ms):
            w.writerow((r.model_id, r.seq_len, i, repr(ms)))
    return buf.getvalue()
