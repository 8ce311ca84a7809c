"""One MemMamba block layer, stepped one token at a time.

Per token the layer (1) attends from the input to the pool as it stood before
this token when the state scorer fires, (2) takes a note of the input when the
token scorer fires, (3) on every ``p``-th layer attends to the pools of the
previous ``g`` layers, (4) fuses both contexts into the input and (5) runs the
SSM step on the fused input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError
from .notes import StatePool, StateSummary, pool_insert, state_importance, summarize, token_importance, window_pool
from .numerics import as_tensor, softmax
from .ssm import ScanState, SSMParams, make_stable_A, ssm_step

WEIGHTED = "weighted"
RESIDUAL = "residual"
GATED = "gated"
ELEMENTWISE = "elementwise"
CONV1D = "conv1d"
FUSIONS = (WEIGHTED, RESIDUAL, GATED, ELEMENTWISE, CONV1D)


def silu(y):
    return y * expit(y)


def attend(x, S, Wq, Wk, Wv) -> tuple[np.ndarray, np.ndarray]:
    """Single-head attention from one query to the rows of ``S``.

    Returns (context, weights).  An empty ``S`` gives a zero context and an
    empty weight vector.
    """
    x = as_tensor(x, 1, "x")
    Wq = as_tensor(Wq, 2, "Wq")
    Wv = as_tensor(Wv, 2, "Wv")
    if S is None or len(S) == 0:
        return np.zeros(Wv.shape[0]), np.zeros(0)
    S = as_tensor(S, 2, "S")
    if S.shape[1] != Wk.shape[1] or Wq.shape[1] != x.shape[0] or Wq.shape[0] != Wk.shape[0]:
        raise DimensionError("attention projections do not match the pool or the query")
    q = Wq @ x
    K = S @ Wk.T
    V = S @ Wv.T
    weights = softmax(K @ q / np.sqrt(q.shape[0]))
    return weights @ V, weights


def cross_token_attention(x, pool: StatePool, Wq, Wk, Wv) -> np.ndarray:
    return attend(x, pool.matrix() if len(pool) else None, Wq, Wk, Wv)[0]


def cross_layer_attention(x, pools_last_g, Wq, Wk, Wv) -> np.ndarray:
    """Attention over the concatenated entries of several layers' pools."""
    rows = [e.vec for pool in pools_last_g for e in pool.entries]
    return attend(x, np.stack(rows) if rows else None, Wq, Wk, Wv)[0]


def fuse(x, c_token, c_layer, method: str, params: dict | None = None) -> np.ndarray:
    """Merge the two attention contexts into the token stream.

    ``params`` supplies ``alpha_tok``/``alpha_lay`` (weighted),
    ``gate_tok``/``gate_lay`` (gated) or ``conv_tok``/``conv_lay`` (conv1d).
    Every method returns ``x`` unchanged when both contexts are zero.
    """
    params = params or {}
    x = as_tensor(x, 1, "x")
    c_token = as_tensor(c_token, 1, "c_token")
    c_layer = as_tensor(c_layer, 1, "c_layer")
    if not (x.shape == c_token.shape == c_layer.shape):
        raise DimensionError(f"shapes differ: {x.shape}, {c_token.shape}, {c_layer.shape}")
    if method == WEIGHTED:
        return x + params.get("alpha_tok", 0.8) * c_token + params.get("alpha_lay", 0.8) * c_layer
    if method == RESIDUAL:
        return x + c_token + c_layer
    if method == GATED:
        zero = np.zeros_like(x)
        return (x + expit(params.get("gate_tok", zero)) * c_token
                + expit(params.get("gate_lay", zero)) * c_layer)
    if method == ELEMENTWISE:
        return x * (1.0 + c_token + c_layer)
    if method == CONV1D:
        # width-3 causal kernel over the sequence [x, c_token, c_layer], read at the
        # last position; the x tap is pinned to the identity
        eye = np.eye(x.shape[0])
        return x + params.get("conv_tok", eye) @ c_token + params.get("conv_lay", eye) @ c_layer
    raise ParameterError(f"unknown fusion method {method!r}")


@dataclass(frozen=True)
class StepInfo:
    token_score: float
    state_score: float
    token_fired: bool
    state_fired: bool
    c_token: np.ndarray
    c_layer: np.ndarray


@dataclass(frozen=True)
class LayerState:
    """Everything one layer carries from token to token."""

    layer: int                      # 1-based index, used for the l mod p trigger
    weights: dict                   # short parameter names -> arrays
    ssm: SSMParams
    scan: ScanState
    pool: StatePool
    z_prev: np.ndarray
    window: tuple = ()
    info: StepInfo | None = field(default=None, compare=False)

    @classmethod
    def initial(cls, cfg, layer: int, weights: dict) -> "LayerState":
        ssm = SSMParams(make_stable_A(weights["A_raw"]), weights["B"], weights["C"])
        return cls(layer=layer, weights=weights, ssm=ssm, scan=ScanState.zeros(ssm.d_s),
                   pool=StatePool(cfg.pool_capacity, cfg.pool_policy), z_prev=np.zeros(ssm.d))


def fusion_params(cfg, w: dict) -> dict:
    params = {"alpha_tok": cfg.alpha, "alpha_lay": cfg.alpha}
    for key in ("gate_tok", "gate_lay", "conv_tok", "conv_lay"):
        if key in w:
            params[key] = w[key]
    return params


def layer_forward(cfg, state: LayerState, x_t, lower_pools=()) -> tuple[np.ndarray, LayerState]:
    """Advance one layer by one token; ``lower_pools`` are the pools of the
    previous ``g`` layers, consulted only when ``layer % p == 0``."""
    w = state.weights
    x = as_tensor(x_t, 1, "x_t")
    zero = np.zeros_like(x)

    st_score = state_importance(state.z_prev, w["st_w"], w["st_b"])
    st_fired = st_score > cfg.tau2
    c_tok = st_score * cross_token_attention(x, state.pool, w["tq"], w["tk"], w["tv"]) if st_fired else zero

    window = (state.window + (x,))[-cfg.window:]
    tok_score = token_importance(x, w["tok_w"], w["tok_b"])
    tok_fired = tok_score > cfg.tau1
    pool = state.pool
    if tok_fired:
        s = tok_score * summarize(window_pool(window, cfg.pooling), w["proj"])
        pool = pool_insert(pool, StateSummary(s, state.layer, state.scan.t, tok_score))

    if state.layer % cfg.p == 0:
        c_lay = cross_layer_attention(x, lower_pools, w["lq"], w["lk"], w["lv"])
    else:
        c_lay = zero

    x_bar = fuse(x, c_tok, c_lay, cfg.fusion, fusion_params(cfg, w))
    scan, y = ssm_step(state.ssm, state.scan, x_bar)
    z = x_bar + silu(y)
    info = StepInfo(tok_score, st_score, tok_fired, st_fired, c_tok, c_lay)
    return z, replace(state, scan=scan, pool=pool, z_prev=z, window=window, info=info)
