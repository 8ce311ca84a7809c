"""Batched, differentiable MemMamba forward built on :mod:`memmamba.graph`.

Semantics match :func:`memmamba.model.model_forward` token for token.  Pools
are fixed-capacity tensors ``(B, C, d_sum)`` with validity masks; the hard
gate decisions and pool slots chosen during a pass are returned as
:class:`Decisions` and can be replayed, which freezes the gates while the
parameters move (finite-difference checks rely on this).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as G
from .block import CONV1D, ELEMENTWISE, GATED, RESIDUAL, WEIGHTED
from .model import LayerTrace, ModelConfig, check_tokens
from .notes import FIFO


@dataclass
class Decisions:
    token_fired: np.ndarray   # (L, n, B) bool
    state_fired: np.ndarray   # (L, n, B) bool
    slot: np.ndarray          # (L, n, B) int, -1 when nothing was stored

    @classmethod
    def empty(cls, L, n, B):
        return cls(np.zeros((L, n, B), bool), np.zeros((L, n, B), bool),
                   np.full((L, n, B), -1, np.int64))


class _Pool:
    """Bookkeeping for one layer's pools across the batch."""

    def __init__(self, B, capacity, width, policy):
        self.vals = G.Var(np.zeros((B, capacity, width)))
        self.valid = np.zeros((B, capacity), bool)
        self.scores = np.zeros((B, capacity))
        self.order = np.full((B, capacity), -1, np.int64)
        self.count = np.zeros(B, np.int64)
        self.policy = policy

    def choose_slots(self, fired, score):
        C = self.valid.shape[1]
        if self.policy == FIFO:
            return np.where(fired, self.count % C, -1)
        full = self.valid.all(axis=1)
        free = np.argmin(self.valid, axis=1)
        lowest = np.where(self.valid, self.scores, np.inf).min(axis=1)
        ties = self.valid & (self.scores == lowest[:, None])
        victim = np.argmax(np.where(ties, self.order, -1), axis=1)
        slot = np.where(full, np.where(score > lowest, victim, -1), free)
        return np.where(fired, slot, -1)

    def insert(self, slot, s, score):
        rows = np.nonzero(slot >= 0)[0]
        if rows.size == 0:
            return
        onehot = np.zeros(self.valid.shape)
        onehot[rows, slot[rows]] = 1.0
        self.vals = G.insert_rows(self.vals, s, onehot)
        cols = slot[rows]
        self.valid[rows, cols] = True
        self.scores[rows, cols] = score[rows]
        self.order[rows, cols] = self.count[rows]
        self.count[rows] += 1

    @property
    def any_valid(self):
        return bool(self.valid.any())


@dataclass
class BatchOutput:
    logits: G.Var            # (B, n, vocab)
    hidden: list             # hidden[l][t] -> Var (B, d)
    decisions: Decisions
    c_token_rows: np.ndarray  # (L, n, B) True where the cross-token context was added
    c_layer_rows: np.ndarray  # (L, n, B) True where a cross-layer context was added

    def trace(self, tokens, mask=None) -> LayerTrace:
        hidden = np.stack([np.stack([v.value for v in row], axis=1) for row in self.hidden], axis=1)
        d = self.decisions
        sizes = None
        return LayerTrace(hidden, np.asarray(tokens), mask, None, None,
                          d.token_fired.transpose(2, 0, 1), d.state_fired.transpose(2, 0, 1), sizes)


def _fuse(cfg, x, c_tok, c_lay, w):
    method = cfg.fusion
    if c_tok is None and c_lay is None:
        return x
    if method == WEIGHTED:
        out = x
        if c_tok is not None:
            out = out + cfg.alpha * c_tok
        if c_lay is not None:
            out = out + cfg.alpha * c_lay
        return out
    if method == RESIDUAL:
        out = x
        for c in (c_tok, c_lay):
            if c is not None:
                out = out + c
        return out
    if method == GATED:
        out = x
        if c_tok is not None:
            out = out + G.sigmoid(w["gate_tok"]) * c_tok
        if c_lay is not None:
            out = out + G.sigmoid(w["gate_lay"]) * c_lay
        return out
    if method == ELEMENTWISE:
        factor = None
        for c in (c_tok, c_lay):
            if c is not None:
                factor = 1.0 + c if factor is None else factor + c
        return x * factor
    if method == CONV1D:
        out = x
        if c_tok is not None:
            out = out + G.matmul_t(c_tok, w["conv_tok"])
        if c_lay is not None:
            out = out + G.matmul_t(c_lay, w["conv_lay"])
        return out
    raise ValueError(method)


def split_layers(params: dict, L: int) -> list[dict]:
    out = [{} for _ in range(L)]
    for name, v in params.items():
        if name.startswith("layers."):
            _, i, short = name.split(".", 2)
            out[int(i)][short] = v
    return out


def forward_batch(cfg: ModelConfig, params: dict, tokens, decisions: Decisions | None = None) -> BatchOutput:
    """Run the model over a (B, n) token batch.

    ``params`` maps weight names to arrays or :class:`graph.Var` leaves.
    """
    tokens = check_tokens(tokens, cfg.vocab)
    if tokens.ndim != 2:
        raise ValueError("forward_batch expects a (B, n) token array")
    B, n = tokens.shape
    L = cfg.L
    replay = decisions is not None
    if not replay:
        decisions = Decisions.empty(L, n, B)
    layers = split_layers(params, L)
    scale = 1.0 / np.sqrt(cfg.attn_dim)
    A = [G.exp(G.neg(G.softplus(w["A_raw"]))) for w in layers]
    pools = [_Pool(B, cfg.pool_capacity, cfg.d_sum, cfg.pool_policy) for _ in range(L)]
    h = [G.Var(np.zeros((B, cfg.d_s))) for _ in range(L)]
    z_prev = [G.Var(np.zeros((B, cfg.d))) for _ in range(L)]
    windows = [[] for _ in range(L)]
    hidden = [[None] * n for _ in range(L)]
    tok_rows = np.zeros((L, n, B), bool)
    lay_rows = np.zeros((L, n, B), bool)

    for t in range(n):
        x = G.gather_rows(params["embed"], tokens[:, t])
        for i in range(L):
            w = layers[i]
            layer = i + 1
            pool = pools[i]

            st = G.sigmoid(G.rowdot(z_prev[i], w["st_w"], w["st_b"]))
            st_fired = decisions.state_fired[i, t] if replay else st.value > cfg.tau2
            decisions.state_fired[i, t] = st_fired
            c_tok = None
            if st_fired.any() and pool.any_valid:
                q = G.matmul_t(x, w["tq"])
                K = G.matmul_t(pool.vals, w["tk"])
                V = G.matmul_t(pool.vals, w["tv"])
                att = G.attend(q, K, V, pool.valid, scale)
                gate = G.reshape(st * st_fired.astype(float), (B, 1))
                c_tok = att * gate
                tok_rows[i, t] = st_fired & pool.valid.any(axis=1)

            win = windows[i]
            win.append(x)
            if len(win) > cfg.window:
                win.pop(0)
            score = G.sigmoid(G.rowdot(x, w["tok_w"], w["tok_b"]))
            if replay:
                fired = decisions.token_fired[i, t]
                slot = decisions.slot[i, t]
            else:
                fired = score.value > cfg.tau1
                slot = pool.choose_slots(fired, score.value)
                decisions.token_fired[i, t] = fired
                decisions.slot[i, t] = slot
            if (slot >= 0).any():
                pooled = G.maximum(win) if cfg.pooling == "max" else G.mean(win)
                s = G.matmul_t(pooled, w["proj"]) * G.reshape(score, (B, 1))
                pool.insert(slot, s, score.value)

            c_lay = None
            if cfg.cross_layer_active(layer):
                lower = [pools[j - 1] for j in cfg.lower_layers(layer)]
                if any(p.any_valid for p in lower):
                    vals = G.concat([p.vals for p in lower], axis=1)
                    mask = np.concatenate([p.valid for p in lower], axis=1)
                    q = G.matmul_t(x, w["lq"])
                    K = G.matmul_t(vals, w["lk"])
                    V = G.matmul_t(vals, w["lv"])
                    c_lay = G.attend(q, K, V, mask, scale)
                    lay_rows[i, t] = mask.any(axis=1)

            x_bar = _fuse(cfg, x, c_tok, c_lay, w)
            h[i] = A[i] * h[i] + G.matmul_t(x_bar, w["B"])
            z = x_bar + G.silu(G.matmul_t(h[i], w["C"]))
            z_prev[i] = z
            hidden[i][t] = z
            x = z

    top = G.stack(hidden[L - 1], axis=1)
    logits = G.matmul_t(top, params["out_w"]) + params["out_b"]
    return BatchOutput(logits, hidden, decisions, tok_rows, lay_rows)


class MemMambaModel:
    """A configuration plus weights, callable on token batches."""

    def __init__(self, config: ModelConfig, weights: dict):
        self.config = config
        self.weights = weights

    def __call__(self, tokens) -> np.ndarray:
        """Logits (B, n, vocab) for a (B, n) batch; a 1-d sequence gets B = 1."""
        tokens = np.asarray(tokens)
        squeeze = tokens.ndim == 1
        out = forward_batch(self.config, self.weights, np.atleast_2d(tokens)).logits.value
        return out[0] if squeeze else out

    def trace(self, tokens, mask=None):
        tokens = np.atleast_2d(np.asarray(tokens))
        out = forward_batch(self.config, self.weights, tokens)
        return out.logits.value, out.trace(tokens, mask)

    def forward(self, tokens):
        from .model import model_forward
        return model_forward(self.config, self.weights, tokens)
