"""Note block: importance scoring, summarization and the bounded state pool."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError
from .numerics import as_tensor

FIFO = "fifo"
PRIORITY = "priority"
POLICIES = (FIFO, PRIORITY)


def token_importance(x, w, b) -> float:
    """sigmoid(w . x + b)."""
    x = as_tensor(x, 1, "x")
    w = as_tensor(w, 1, "w")
    if x.shape != w.shape:
        raise DimensionError(f"scorer weight {w.shape} does not match input {x.shape}")
    return float(expit(w @ x + float(np.asarray(b).reshape(-1)[0])))


# Same contract as token_importance, applied to the previous layer output z_{t-1}
# with its own parameters.
state_importance = token_importance


def summarize(x, proj) -> np.ndarray:
    x = as_tensor(x, 1, "x")
    proj = as_tensor(proj, 2, "proj")
    if proj.shape[1] != x.shape[0]:
        raise DimensionError(f"projection {proj.shape} cannot map a vector of size {x.shape[0]}")
    return proj @ x


def window_pool(buffer, how: str = "max") -> np.ndarray:
    """Pool the last few layer inputs element-wise before summarization."""
    stack = np.stack(buffer)
    if how == "max":
        return stack.max(axis=0)
    if how == "mean":
        return stack.mean(axis=0)
    raise ParameterError(f"unknown pooling {how!r}")


@dataclass(frozen=True)
class StateSummary:
    vec: np.ndarray
    layer: int
    step: int
    score: float


@dataclass(frozen=True)
class StatePool:
    capacity: int = 50
    policy: str = FIFO
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.capacity < 1:
            raise ParameterError("pool capacity must be >= 1")
        if self.policy not in POLICIES:
            raise ParameterError(f"unknown pool policy {self.policy!r}")

    def __len__(self):
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        """Summaries stacked as rows (oldest first)."""
        return np.stack([e.vec for e in self.entries])

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self.entries]


def pool_insert(pool: StatePool, s: StateSummary) -> StatePool:
    """Insert a summary, evicting per the pool's policy when full.

    FIFO drops the oldest entry.  PRIORITY drops the lowest score; among equal
    scores the most recent is dropped, and an incoming summary that does not
    beat the current minimum is rejected.
    """
    entries = pool.entries
    if entries and entries[0].vec.shape != np.shape(s.vec):
        raise DimensionError(f"summary size {np.shape(s.vec)} does not match pool {entries[0].vec.shape}")
    if len(entries) < pool.capacity:
        return StatePool(pool.capacity, pool.policy, entries + (s,))
    if pool.policy == FIFO:
        return StatePool(pool.capacity, pool.policy, entries[1:] + (s,))
    lowest = min(e.score for e in entries)
    if s.score <= lowest:
        return pool
    victim = max(i for i, e in enumerate(entries) if e.score == lowest)
    return StatePool(pool.capacity, pool.policy, entries[:victim] + entries[victim + 1:] + (s,))
