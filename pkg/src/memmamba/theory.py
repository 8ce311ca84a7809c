"""Closed-form bounds and the simulations that check them numerically."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InstabilityError, ParameterError
from .numerics import as_tensor, block_max_pool, reconstruct_broadcast

SLACK = 1e-9


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    holds: bool
    margin: float

    @classmethod
    def of(cls, name: str, lhs: float, rhs: float, slack: float = SLACK) -> "BoundCheck":
        lhs, rhs = float(lhs), float(rhs)
        return cls(name, lhs, rhs, bool(lhs <= rhs + slack), rhs - lhs)


def checks_to_csv(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("name", "lhs", "rhs", "holds", "margin"))
    for c in checks:
        w.writerow((c.name, repr(c.lhs), repr(c.rhs), str(c.holds).lower(), repr(c.margin)))
    return buf.getvalue()


# --- pooling -----------------------------------------------------------------

def pooling_error_check(H, w: int, name: str = "pooling") -> BoundCheck:
    """Block-max summaries broadcast back over their blocks stay within
    ``sqrt(n d) * Delta`` of ``H`` in Frobenius norm, where ``Delta`` is the
    largest gap between a block maximum and an entry of that block."""
    H = as_tensor(H, 2, "H")
    n, d = H.shape
    if int(w) != w or w < 1 or n % w:
        raise ParameterError(f"window {w} must divide the row count {n}")
    s = block_max_pool(H, w)
    H_rec = reconstruct_broadcast(s, w, n)
    gap = H_rec - H
    delta = float(gap.max())
    lhs = float(np.linalg.norm(gap))
    return BoundCheck.of(name, lhs, np.sqrt(n * d) * delta)


# --- layered decay -----------------------------------------------------------

def _check_norms(norms):
    norms = np.asarray(norms, dtype=np.float64)
    if norms.ndim != 1 or norms.size == 0:
        raise ParameterError("need at least one layer norm")
    if np.any(norms <= 0) or np.any(norms >= 1):
        raise ParameterError("every transition norm must lie in (0, 1)")
    return norms


def layered_decay(A_norms, tau: int, h0_norm: float) -> float:
    """``max||A||^(L tau) * ||h0||`` for an early state pushed through L layers."""
    norms = _check_norms(A_norms)
    if tau < 0 or h0_norm < 0:
        raise ParameterError("tau and h0_norm must be non-negative")
    return float(norms.max() ** (norms.size * tau) * h0_norm)


def simulate_layered_decay(A_diags, tau: int, h0, couplings=None) -> float:
    """Norm of an early layer-1 state after it decays ``tau`` unforced steps in
    every layer, handed upward through couplings of operator norm <= 1.

    ``A_diags`` is a list of per-layer diagonal transitions; ``couplings`` a
    list of L-1 square matrices (identity when omitted).
    """
    h = np.asarray(h0, dtype=np.float64).copy()
    for l, a in enumerate(A_diags):
        if l > 0:
            U = np.eye(h.size) if couplings is None else np.asarray(couplings[l - 1])
            h = U @ h
        for _ in range(tau):
            h = np.asarray(a) * h
    return float(np.linalg.norm(h))


def _contraction(rng, d):
    U = rng.standard_normal((d, d))
    return U / max(np.linalg.norm(U, 2), 1.0) * rng.uniform(0.1, 1.0)


def layered_decay_check(rng, L: int | None = None, d: int = 4, name: str = "layered_decay") -> BoundCheck:
    L = L or int(rng.integers(1, 6))
    tau = int(rng.integers(0, 20))
    A = [rng.uniform(0.05, 0.99, d) for _ in range(L)]
    U = [_contraction(rng, d) for _ in range(L - 1)]
    h0 = rng.standard_normal(d)
    measured = simulate_layered_decay(A, tau, h0, U)
    bound = layered_decay([a.max() for a in A], tau, np.linalg.norm(h0))
    return BoundCheck.of(name, measured, bound)


# --- BIBO stability ----------------------------------------------------------

def bibo_bound(A_norm: float, B_norm: float, x_bound: float, alpha: float, c_bound: float) -> float:
    """``||B|| (x + alpha c) / (1 - ||A||)``, the limit of the geometric series."""
    if A_norm >= 1:
        raise InstabilityError(f"||A|| = {A_norm} >= 1 admits no state bound")
    if min(A_norm, B_norm, x_bound, alpha, c_bound) < 0:
        raise ParameterError("norms, bounds and alpha must be non-negative")
    return B_norm * (x_bound + alpha * c_bound) / (1.0 - A_norm)


def _ball(rng, shape, radius):
    """Random vectors (last axis) with norms uniform in [0, radius]."""
    v = rng.standard_normal(shape)
    v /= np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-300)
    return v * (rng.uniform(0.0, 1.0, shape[:-1] + (1,)) * radius)


def simulate_bibo(A_diag, B, x_bound, alpha, c_bound, steps: int = 100_000, rng=None,
                  chunk: int = 2000) -> np.ndarray:
    """Largest ``||h_t||`` over ``steps`` steps of ``h <- A h + B (x + alpha c)``.

    Batched: ``A_diag`` (N, d_s), ``B`` (N, d_s, d), bounds (N,).  Inputs are
    drawn inside their balls; half the steps push a fixed worst direction
    (the top right singular vector of B) so the state approaches the bound.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    A_diag = np.atleast_2d(np.asarray(A_diag, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 2:
        B = B[None]
    N, ds, d = B.shape
    x_bound = np.broadcast_to(np.asarray(x_bound, float), (N,))
    c_bound = np.broadcast_to(np.asarray(c_bound, float), (N,))
    alpha = np.broadcast_to(np.asarray(alpha, float), (N,))
    top = np.linalg.svd(B)[2][:, 0, :]                      # (N, d)
    radius = x_bound + alpha * c_bound
    h = np.zeros((N, ds))
    peak = np.zeros(N)
    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        x = _ball(rng, (m, N, d), x_bound[None, :, None])
        c = _ball(rng, (m, N, d), c_bound[None, :, None])
        u = x + alpha[None, :, None] * c
        worst = rng.random((m, N)) < 0.5
        u = np.where(worst[..., None], top[None] * radius[None, :, None], u)
        drive = np.einsum("nsd,mnd->mns", B, u)
        H = np.empty((m, N, ds))
        for k in range(m):
            h = A_diag * h + drive[k]
            H[k] = h
        peak = np.maximum(peak, np.linalg.norm(H, axis=-1).max(axis=0))
        done += m
    return peak


# --- recall and budgets ------------------------------------------------------

def recall_bounds(A_norm, B_norm, gamma, theta, k, alpha, Delta) -> tuple[float, float]:
    """(upper bound on plain-SSM recall at distance k, lower bound on
    summary-attention recall), both clamped to [0, 1]."""
    if theta <= 0:
        raise ParameterError("detection threshold theta must be > 0")
    if not Delta < gamma:
        raise ParameterError("Delta must be smaller than gamma")
    if k < 0:
        raise ParameterError("k must be non-negative")
    ub = A_norm ** k * B_norm * gamma / theta
    lb = alpha * (gamma - Delta) / theta
    return float(np.clip(ub, 0.0, 1.0)), float(np.clip(lb, 0.0, 1.0))


def equal_budget_lengths(C, L_T, d_T, L_O, d_O) -> tuple[float, float]:
    """Context lengths reachable under a compute budget ``C`` by a quadratic
    model (``C = L n^2 d``) and a linear one (``C = L n d``)."""
    if min(C, L_T, d_T, L_O, d_O) <= 0:
        raise ParameterError("budget, depths and widths must be positive")
    return float(np.sqrt(C / (L_T * d_T))), float(C / (L_O * d_O))


# --- suite -------------------------------------------------------------------

def run_bound_suite(instances: int = 1000, seed: int = 0, bibo_steps: int = 100_000) -> list[BoundCheck]:
    """Seeded random instances of every bound: pooling, layered decay, BIBO
    and the single-layer contribution bound."""
    from .ssm import SSMParams, bound_for, empirical_contribution

    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    checks = []
    for i in range(instances):
        w = int(rng.integers(1, 6))
        H = rng.standard_normal((w * int(rng.integers(1, 8)), int(rng.integers(1, 6))))
        checks.append(pooling_error_check(H, w, f"pooling/{i}"))
    for i in range(instances):
        checks.append(layered_decay_check(rng, name=f"layered_decay/{i}"))

    ds, d = 4, 3
    A = rng.uniform(0.0, 0.995, (instances, ds))
    B = rng.standard_normal((instances, ds, d))
    x_b = rng.uniform(0.1, 2.0, instances)
    c_b = rng.uniform(0.0, 2.0, instances)
    alpha = rng.uniform(0.0, 1.0, instances)
    peak = simulate_bibo(A, B, x_b, alpha, c_b, bibo_steps, rng)
    for i in range(instances):
        rhs = bibo_bound(A[i].max(), np.linalg.norm(B[i], 2), x_b[i], alpha[i], c_b[i])
        checks.append(BoundCheck.of(f"bibo/{i}", peak[i], rhs))

    for i in range(instances):
        ds_i, d_i = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        p = SSMParams(rng.uniform(0.01, 0.99, ds_i), rng.standard_normal((ds_i, d_i)),
                      rng.standard_normal((d_i, ds_i)))
        probe = rng.standard_normal(d_i)
        k = int(rng.integers(0, 60))
        checks.append(BoundCheck.of(f"contribution/{i}", empirical_contribution(p, k, probe),
                                    bound_for(p, probe, k)))
    return checks
