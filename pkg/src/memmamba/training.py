"""Loss, exact gradients, AdamW and the training loop for small models."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import graph as G
from .batched import Decisions, MemMambaModel, forward_batch
from .errors import DimensionError, DivergenceError, InputError, NumericalError, ParameterError
from .model import ModelConfig, init_weights, rng_for, save_checkpoint
from .tasks import iter_windows

LOG_FIELDS = ("step", "loss", "grad_norm", "lr")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    accum_steps: int = 4
    steps: int = 0
    seed: int = 123
    context_len: int = 64
    batch_size: int = 8

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("lr must be > 0")
        if not self.clip_norm > 0:
            raise ParameterError("clip_norm must be > 0")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")
        for name in ("accum_steps", "context_len", "batch_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def cross_entropy(logits, targets) -> float:
    """Mean of ``-log softmax(logits)[target]`` over the leading axes."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"logits {logits.shape} do not match targets {targets.shape}")
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise InputError(f"target out of range [0, {V})")
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    return float(np.mean(logsumexp(logits, axis=-1) - picked))


@dataclass
class Gradients:
    loss: float
    grads: dict[str, np.ndarray]
    decisions: Decisions

    @property
    def norm(self) -> float:
        return global_norm(self.grads)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def check_finite(grads: dict) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")


def loss_and_grads(cfg: ModelConfig, weights: dict, batch, decisions: Decisions | None = None,
                   check: bool = True) -> Gradients:
    """Reverse-mode gradients of the weighted cross entropy on ``batch``.

    ``batch`` is ``(tokens, targets, weights)`` with shapes (B, n).  Passing
    ``decisions`` replays the gate outcomes of an earlier pass.
    """
    tokens, targets, mask = (np.asarray(a) for a in batch)
    if mask.sum() <= 0:
        raise InputError("batch has no positions with positive loss weight")
    with G.Tape() as tape:
        names = list(weights)
        params = {k: tape.param(weights[k]) for k in names}
        out = forward_batch(cfg, params, tokens, decisions)
        loss = G.cross_entropy(out.logits, targets.astype(np.int64), mask.astype(np.float64))
        raw = tape.backward(loss)
    grads = {name: np.zeros_like(weights[name]) if g is None else g for name, g in zip(names, raw)}
    if check:
        check_finite(grads)
    return Gradients(float(loss.value), grads, out.decisions)


def backward(model: MemMambaModel, batch, decisions: Decisions | None = None) -> Gradients:
    return loss_and_grads(model.config, model.weights, batch, decisions)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def clip_grads(grads: dict, clip_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def optimizer_step(params: dict, grads: dict, cfg: TrainConfig, moments: AdamState | None = None,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One AdamW update.  Returns ``(params, moments, grad_norm_before_clipping)``."""
    if moments is None:
        moments = AdamState.zeros_like(params)
    if set(grads) != set(params) or set(moments.m) != set(params):
        raise DimensionError("parameter, gradient and moment names differ")
    for k, p in params.items():
        if grads[k].shape != p.shape or moments.m[k].shape != p.shape:
            raise DimensionError(f"shape mismatch for {k!r}")
    grads, norm = clip_grads(grads, cfg.clip_norm)
    t = moments.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * moments.m[k] + (1 - beta1) * g
        v = beta2 * moments.v[k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p = p - cfg.lr * cfg.weight_decay * p
        new_p[k] = p - cfg.lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t), norm


@dataclass
class TrainResult:
    config: ModelConfig
    weights: dict
    log: list = field(default_factory=list)   # rows of (step, loss, grad_norm, lr)
    checkpoint: Path | None = None

    @property
    def model(self) -> MemMambaModel:
        return MemMambaModel(self.config, self.weights)

    @property
    def losses(self) -> list[float]:
        return [row[1] for row in self.log]

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for step, loss, norm, lr in self.log:
            w.writerow([step, repr(loss), repr(norm), repr(lr)])
        return buf.getvalue()


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, task, out_dir=None,
          init: dict | None = None, progress=None) -> TrainResult:
    """Constant-rate AdamW with gradient accumulation.

    ``task`` provides ``sample(rng, batch_size) -> (tokens, targets, weights)``.
    Initial weights come from the model seed and batches from the training
    seed.  With ``out_dir`` the loss log goes to ``train_log.csv`` and the
    final weights to ``checkpoint/``.
    """
    weights = dict(init) if init is not None else init_weights(model_cfg)
    rng = rng_for(train_cfg.seed, "data")
    moments = AdamState.zeros_like(weights)
    result = TrainResult(model_cfg, weights)
    for step in range(1, train_cfg.steps + 1):
        total = None
        loss_sum = 0.0
        for _ in range(train_cfg.accum_steps):
            g = loss_and_grads(model_cfg, weights, task.sample(rng, train_cfg.batch_size), check=False)
            if not np.isfinite(g.loss):
                raise DivergenceError(step, g.loss)
            check_finite(g.grads)
            loss_sum += g.loss
            if total is None:
                total = g.grads
            else:
                total = {k: total[k] + g.grads[k] for k in total}
        loss = loss_sum / train_cfg.accum_steps
        total = {k: v / train_cfg.accum_steps for k, v in total.items()}
        weights, moments, norm = optimizer_step(weights, total, train_cfg, moments)
        result.log.append((step, loss, norm, train_cfg.lr))
        if progress is not None:
            progress(step, loss)
    result.weights = weights
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_log.csv").write_text(result.log_csv())
        result.checkpoint = save_checkpoint(out_dir / "checkpoint", model_cfg, weights,
                                            {"train": train_cfg.to_dict()})
    return result


def perplexity(model, corpus, context_len: int, batch_size: int = 16) -> float:
    """``exp`` of the mean next-token cross entropy over non-overlapping windows.

    Window ``k`` reads ``corpus[k*c : (k+1)*c]`` and predicts the following
    byte at every position, so each token after the first is scored once.
    """
    corpus = np.asarray(corpus)
    if corpus.size < 2:
        raise InputError("corpus needs at least two tokens")
    inputs = list(iter_windows(corpus[:-1], context_len))
    targets = list(iter_windows(corpus[1:], context_len))
    nll, count = 0.0, 0
    full = [i for i, w in enumerate(inputs) if len(w) == context_len]
    rest = [i for i, w in enumerate(inputs) if len(w) != context_len]
    for i in range(0, len(full), batch_size):
        idx = full[i:i + batch_size]
        logits = model(np.stack([inputs[j] for j in idx]))
        tgt = np.stack([targets[j] for j in idx])
        nll += cross_entropy(logits, tgt) * tgt.size
        count += tgt.size
    for j in rest:
        logits = model(inputs[j][None])
        nll += cross_entropy(logits, targets[j][None]) * len(targets[j])
        count += len(targets[j])
    return float(np.exp(nll / count))
