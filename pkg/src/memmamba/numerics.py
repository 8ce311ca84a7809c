"""Dense float64 kernels: products, softmax, similarity, ridge, block pooling.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Functions here
validate shapes, raise :mod:`memmamba.errors` exceptions, and never mutate
their inputs.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError, ParameterError, SingularityError

MAGIC = b"MMT1"


def as_tensor(x, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a = as_tensor(a, 2, "a")
    b = as_tensor(b, 2, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    v = as_tensor(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = v / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def cosine_similarity(a, b, eps: float = 1e-12) -> float:
    a = as_tensor(a).ravel()
    b = as_tensor(b).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(a @ b) / max(na * nb, eps)
    return min(1.0, max(-1.0, c))


def rowwise_cosine(a, b, eps: float = 1e-12) -> np.ndarray:
    """Cosine similarity between matching rows of two (..., d) arrays."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dots = np.sum(a * b, axis=-1)
    out = np.where((na == 0) | (nb == 0), 0.0, dots / np.maximum(na * nb, eps))
    return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True)
class RidgeSolution:
    W: np.ndarray
    lam: float
    residual_fro: float

    def normal_residual(self, X, Y) -> float:
        """Relative residual of (X^T X + lam I) W = X^T Y."""
        X = as_tensor(X, 2)
        Y = as_tensor(Y, 2)
        lhs = (X.T @ X + self.lam * np.eye(X.shape[1])) @ self.W
        rhs = X.T @ Y
        scale = max(np.linalg.norm(rhs), np.linalg.norm(lhs), 1e-300)
        return float(np.linalg.norm(lhs - rhs) / scale)


def ridge_fit(X, Y, lam: float) -> RidgeSolution:
    """Least squares with an L2 penalty, solved through the normal equations."""
    X = as_tensor(X, 2, "X")
    Y = as_tensor(Y, 2, "Y")
    if X.shape[0] < 1:
        raise DimensionError("ridge_fit needs at least one row")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    gram = X.T @ X + lam * np.eye(X.shape[1])
    rhs = X.T @ Y
    if lam == 0 and np.linalg.cond(gram) > 1.0 / np.finfo(np.float64).eps:
        raise SingularityError("X^T X is singular; use lambda > 0")
    try:
        W = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    # one step of iterative refinement keeps the normal-equation residual tight
    W = W + np.linalg.solve(gram, rhs - gram @ W)
    return RidgeSolution(W=W, lam=float(lam), residual_fro=float(np.linalg.norm(Y - X @ W)))


def _check_window(w: int) -> None:
    if int(w) != w or w <= 0:
        raise ParameterError(f"window must be a positive integer, got {w}")


def block_max_pool(H, w: int) -> np.ndarray:
    """Column-wise max over consecutive blocks of ``w`` rows.

    A trailing partial block is pooled as-is, without padding.
    """
    _check_window(w)
    H = as_tensor(H, 2, "H")
    n = H.shape[0]
    return np.stack([H[i:i + w].max(axis=0) for i in range(0, n, w)])


def block_mean_pool(H, w: int) -> np.ndarray:
    _check_window(w)
    H = as_tensor(H, 2, "H")
    n = H.shape[0]
    return np.stack([H[i:i + w].mean(axis=0) for i in range(0, n, w)])


def reconstruct_broadcast(s, w: int, n: int | None = None) -> np.ndarray:
    """Repeat every summary row ``w`` times; truncate to ``n`` rows if given."""
    _check_window(w)
    s = as_tensor(s, 2, "s")
    out = np.repeat(s, w, axis=0)
    if n is not None:
        if n > out.shape[0]:
            raise DimensionError(f"cannot reconstruct {n} rows from {s.shape[0]} blocks of {w}")
        out = out[:n]
    return out


def operator_norm(M, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = as_tensor(M, 2, "M")
    if not np.any(M):
        return 0.0
    gram = M.T @ M
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    # a fixed, non-symmetric start avoids being orthogonal to the top vector
    v = v + 1e-3 * np.arange(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = gram @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v_next = u / nu
        lam_next = float(v_next @ gram @ v_next)
        if abs(lam_next - lam) <= tol * max(lam_next, 1e-300):
            lam = lam_next
            break
        v, lam = v_next, lam_next
    return float(np.sqrt(max(lam, 0.0)))


def save_tensor(path, arr) -> None:
    """Write the MMT1 container: magic, u32 rank, u64 dims, f64 payload (LE)."""
    arr = as_tensor(arr)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise InputError(f"{path}: not an MMT1 tensor file")
    (rank,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) - offset != 8 * count:
        raise InputError(f"{path}: payload size does not match shape {dims}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return flat.astype(np.float64).reshape(dims)


def tensor_to_csv(path, arr) -> None:
    arr = as_tensor(arr)
    if arr.ndim > 2:
        raise DimensionError("CSV export supports rank <= 2")
    rows = np.atleast_2d(arr)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
