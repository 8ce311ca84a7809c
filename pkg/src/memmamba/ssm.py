"""Diagonal, time-invariant state-space recursion and its decay analysis.

    h_t = A * h_{t-1} + B x_t        (A diagonal, entries in (0, 1))
    y_t = C h_t
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .numerics import as_tensor, operator_norm


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def make_stable_A(raw) -> np.ndarray:
    """Map unconstrained parameters to decay factors exp(-softplus(raw)) in (0, 1)."""
    raw = as_tensor(raw)
    a = np.exp(-softplus(raw))
    # keep the open interval even when softplus under/overflows
    tiny = np.finfo(np.float64).tiny
    return np.clip(a, tiny, np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class SSMParams:
    A_diag: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_tensor(self.A_diag, 1, "A_diag")
        B = as_tensor(self.B, 2, "B")
        C = as_tensor(self.C, 2, "C")
        if B.shape[0] != A.shape[0] or C.shape[1] != A.shape[0] or C.shape[0] != B.shape[1]:
            raise DimensionError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)) or not np.all(np.isfinite(C)):
            raise ParameterError("SSM parameters must be finite")
        if np.max(np.abs(A)) >= 1.0:
            raise ParameterError("max |A_diag| must be < 1 for BIBO stability")
        object.__setattr__(self, "A_diag", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def d_s(self) -> int:
        return self.A_diag.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_raw(cls, raw_A, B, C) -> "SSMParams":
        return cls(make_stable_A(raw_A), B, C)


@dataclass(frozen=True)
class ScanState:
    h: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d_s: int) -> "ScanState":
        return cls(np.zeros(d_s), 0)


def ssm_step(p: SSMParams, state: ScanState, x) -> tuple[ScanState, np.ndarray]:
    x = as_tensor(x, 1, "x")
    if x.shape[0] != p.d or state.h.shape != (p.d_s,):
        raise DimensionError(f"x{x.shape} / h{state.h.shape} do not match d={p.d}, d_s={p.d_s}")
    h = p.A_diag * state.h + p.B @ x
    return ScanState(h, state.t + 1), p.C @ h


def ssm_scan(p: SSMParams, X, h0=None) -> tuple[np.ndarray, np.ndarray]:
    """Run ``ssm_step`` over every row of ``X``; returns (H, Y)."""
    X = as_tensor(X, 2, "X")
    n = X.shape[0]
    if n < 1:
        raise DimensionError("scan needs at least one step")
    state = ScanState(np.zeros(p.d_s) if h0 is None else as_tensor(h0, 1, "h0"), 0)
    H = np.empty((n, p.d_s))
    Y = np.empty((n, p.d))
    for t in range(n):
        state, Y[t] = ssm_step(p, state, X[t])
        H[t] = state.h
    return H, Y


def contribution_bound(a_norm: float, b_norm: float, x_norm: float, k: int) -> float:
    """Upper bound ||A||^k ||B|| ||x|| on the state contribution of an input k steps back."""
    if not 0.0 < a_norm < 1.0:
        raise ParameterError(f"a_norm must lie in (0, 1), got {a_norm}")
    if k < 0:
        raise ParameterError(f"k must be non-negative, got {k}")
    return a_norm ** k * b_norm * x_norm


def empirical_contributions(p: SSMParams, k_max: int, probe) -> np.ndarray:
    """||h_t|| when ``probe`` is fed k steps before t and zeros afterwards, k = 0..k_max."""
    probe = as_tensor(probe, 1, "probe")
    state, _ = ssm_step(p, ScanState.zeros(p.d_s), probe)
    out = np.empty(k_max + 1)
    out[0] = np.linalg.norm(state.h)
    zero = np.zeros(p.d)
    for k in range(1, k_max + 1):
        state, _ = ssm_step(p, state, zero)
        out[k] = np.linalg.norm(state.h)
    return out


def empirical_contribution(p: SSMParams, k: int, probe) -> float:
    if k < 0:
        raise ParameterError(f"k must be non-negative, got {k}")
    return float(empirical_contributions(p, k, probe)[k])


def bound_for(p: SSMParams, probe, k: int) -> float:
    """contribution_bound evaluated with the norms of ``p`` and ``probe``."""
    return contribution_bound(float(np.max(p.A_diag)), operator_norm(p.B),
                              float(np.linalg.norm(probe)), k)
