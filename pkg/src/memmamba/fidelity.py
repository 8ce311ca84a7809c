"""Memory-fidelity metrics over a forward trace.

ETMF measures how well the top layer's output distribution reconstructs the
input token embedding.  ECLMF measures how linearly recoverable layer ``l``
states are from layer ``l - G`` states, via a ridge surrogate.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .model import LayerTrace
from .numerics import ridge_fit, rowwise_cosine, softmax

ECLMF_EPS = 1e-6
DEFAULT_DELTAS = (8, 16, 32)
DEFAULT_GAPS = (2, 5, 10)


def _prepare(trace: LayerTrace, embedding, W_out):
    tr = trace.batched()
    embedding = np.asarray(embedding, dtype=np.float64)
    W_out = np.asarray(W_out, dtype=np.float64)
    d = tr.hidden.shape[-1]
    if embedding.ndim != 2 or W_out.ndim != 2 or embedding.shape[1] != d or W_out.shape[1] != d:
        raise DimensionError(f"embedding {embedding.shape} / W_out {W_out.shape} do not match width {d}")
    if embedding.shape[0] != W_out.shape[0]:
        raise DimensionError("embedding and W_out vocabularies differ")
    mask = np.ones(tr.tokens.shape, bool) if tr.mask is None else np.asarray(tr.mask, bool)
    return tr, embedding, W_out, mask


def reconstructions(trace: LayerTrace, embedding, W_out, temperature: float = 1.0, bias=None):
    """(t, t_hat, mask): true and expected embeddings, each (B, n, d)."""
    tr, embedding, W_out, mask = _prepare(trace, embedding, W_out)
    logits = tr.hidden[:, -1] @ W_out.T
    if bias is not None:
        logits = logits + bias
    p = softmax(logits, temperature)
    return embedding[tr.tokens], p @ embedding, mask


def etmf(trace: LayerTrace, embedding, W_out, temperature: float = 1.0, bias=None) -> float:
    """Mean cosine between each token's embedding and its expected reconstruction."""
    t, t_hat, mask = reconstructions(trace, embedding, W_out, temperature, bias)
    return float(rowwise_cosine(t, t_hat)[mask].mean())


def etmf_delta(trace: LayerTrace, embedding, W_out, delta: int, temperature: float = 1.0,
               bias=None) -> float:
    """Mean cosine between token ``i`` and the reconstruction at ``i + delta``."""
    if delta < 0:
        raise ParameterError("delta must be >= 0")
    t, t_hat, mask = reconstructions(trace, embedding, W_out, temperature, bias)
    n = t.shape[1]
    if n <= delta:
        raise ParameterError(f"sequence length {n} is not longer than delta {delta}")
    cos = rowwise_cosine(t[:, :n - delta], t_hat[:, delta:])
    valid = mask[:, :n - delta] & mask[:, delta:]
    if not valid.any():
        raise ParameterError("no valid position pairs for this delta")
    return float(cos[valid].mean())


def layer_matrices(trace: LayerTrace):
    """Masked, flattened (B*n, d) state matrix for every layer."""
    tr = trace.batched()
    mask = np.ones(tr.tokens.shape, bool) if tr.mask is None else np.asarray(tr.mask, bool)
    return [tr.hidden[:, l][mask] for l in range(tr.hidden.shape[1])]


def eclmf_pair(X, Y, lam: float = 1e-4, eps: float = ECLMF_EPS) -> float:
    """``1 - ||Y - X W||_F / (||X||_F + eps)`` with ``W`` the ridge solution."""
    sol = ridge_fit(X, Y, lam)
    return 1.0 - sol.residual_fro / (float(np.linalg.norm(X)) + eps)


def eclmf(trace: LayerTrace, G: int, lam: float = 1e-4, eps: float = ECLMF_EPS) -> float:
    """Mean surrogate score over every layer pair ``(l, l + G)``."""
    mats = layer_matrices(trace)
    L = len(mats)
    if G < 1:
        raise ParameterError("gap must be >= 1")
    if L <= G:
        raise ParameterError(f"need more than {G} layers, trace has {L}")
    return float(np.mean([eclmf_pair(mats[l], mats[l + G], lam, eps) for l in range(L - G)]))


@dataclass
class FidelityReport:
    etmf: float
    etmf_delta: dict = field(default_factory=dict)
    eclmf: dict = field(default_factory=dict)
    sample_count: int = 0

    @property
    def mean_eclmf(self) -> float:
        return float(np.mean(list(self.eclmf.values()))) if self.eclmf else float("nan")

    def to_json(self) -> str:
        d = asdict(self)
        d["etmf_delta"] = {str(k): v for k, v in self.etmf_delta.items()}
        d["eclmf"] = {str(k): v for k, v in self.eclmf.items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def rows(self, model_id: str) -> list[tuple]:
        out = [(model_id, "etmf", 0, self.etmf)]
        out += [(model_id, "etmf_delta", k, v) for k, v in sorted(self.etmf_delta.items())]
        out += [(model_id, "eclmf", k, v) for k, v in sorted(self.eclmf.items())]
        return out


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model_id", "metric", "delta_or_gap", "value"))
    for model_id, metric, k, v in rows:
        w.writerow((model_id, metric, k, repr(float(v))))
    return buf.getvalue()


def fidelity_report(trace: LayerTrace, embedding, W_out, deltas=DEFAULT_DELTAS, gaps=DEFAULT_GAPS,
                    temperature: float = 1.0, lam: float = 1e-4, bias=None) -> FidelityReport:
    """Every metric the trace supports; deltas longer than the sequence and
    gaps not smaller than the depth are left out."""
    tr = trace.batched()
    n, L = tr.tokens.shape[1], tr.hidden.shape[1]
    mask = np.ones(tr.tokens.shape, bool) if tr.mask is None else np.asarray(tr.mask, bool)
    return FidelityReport(
        etmf=etmf(tr, embedding, W_out, temperature, bias),
        etmf_delta={k: etmf_delta(tr, embedding, W_out, k, temperature, bias) for k in deltas if k < n},
        eclmf={G: eclmf(tr, G, lam) for G in gaps if G < L},
        sample_count=int(mask.sum()),
    )
