"""Stacked MemMamba model: configuration, weights, reference forward, checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .block import CONV1D, FUSIONS, GATED, LayerState, layer_forward
from .errors import InputError, ParameterError
from .notes import POLICIES
from .numerics import load_tensor, save_tensor
from .ssm import inverse_softplus

CHECKPOINT_FORMAT = "memmamba-checkpoint/1"

# named sub-seeds; every random stream derives from (config seed, tag)
SEED_TAGS = {"init": 1, "data": 2, "eval": 3, "bench": 4}

SCORER_BIAS = 2.0


def rng_for(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), SEED_TAGS[tag]]))


@dataclass(frozen=True)
class ModelConfig:
    L: int = 2
    d: int = 32
    d_s: int = 16
    d_sum: int = 64
    d_attn: int | None = None
    pool_capacity: int = 50
    pool_policy: str = "priority"
    tau1: float = 0.5
    tau2: float = 0.5
    p: int = 4
    g: int = 3
    fusion: str = "weighted"
    alpha: float = 0.8
    vocab: int = 256
    seed: int = 123
    pooling: str = "max"
    window: int = 1

    def __post_init__(self):
        for name in ("L", "d", "d_s", "d_sum", "pool_capacity", "p", "g", "vocab", "window"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_attn is not None and self.d_attn < 1:
            raise ParameterError("d_attn must be >= 1")
        if self.alpha < 0:
            raise ParameterError("alpha must be >= 0")
        if not (np.isfinite(self.tau1) and np.isfinite(self.tau2)):
            raise ParameterError("thresholds must be finite")
        if self.fusion not in FUSIONS:
            raise ParameterError(f"unknown fusion {self.fusion!r}")
        if self.pool_policy not in POLICIES:
            raise ParameterError(f"unknown pool policy {self.pool_policy!r}")
        if self.pooling not in ("max", "mean"):
            raise ParameterError(f"unknown pooling {self.pooling!r}")

    @property
    def attn_dim(self) -> int:
        return self.d_attn or self.d

    def cross_layer_active(self, layer: int) -> bool:
        return layer % self.p == 0

    def lower_layers(self, layer: int) -> range:
        """1-based indices of the layers whose pools ``layer`` reads."""
        return range(max(1, layer - self.g), layer)

    def ablated(self) -> "ModelConfig":
        """Same architecture with every memory path switched off."""
        return replace(self, tau1=1.1, tau2=1.1, p=self.L + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def init_weights(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    rng = rng_for(cfg.seed if seed is None else seed, "init")
    d, ds, dm, da, V = cfg.d, cfg.d_s, cfg.d_sum, cfg.attn_dim, cfg.vocab
    normal = rng.standard_normal
    w: dict[str, np.ndarray] = {"embed": normal((V, d))}
    for i in range(cfg.L):
        layer = i + 1
        pre = f"layers.{i}."
        rate = np.exp(rng.uniform(np.log(1e-3), np.log(0.7), ds))   # decay a = exp(-rate)
        a = np.exp(-rate)
        w[pre + "A_raw"] = inverse_softplus(rate)
        w[pre + "B"] = normal((ds, d)) * np.sqrt((1.0 - a * a)[:, None] / d)
        w[pre + "C"] = normal((d, ds)) / np.sqrt(ds)
        w[pre + "tok_w"] = normal(d) / np.sqrt(d)
        # scorers start open so the gated paths receive gradient from step one
        w[pre + "tok_b"] = np.full(1, SCORER_BIAS)
        w[pre + "st_w"] = normal(d) / np.sqrt(d)
        w[pre + "st_b"] = np.full(1, SCORER_BIAS)
        w[pre + "proj"] = normal((dm, d)) / np.sqrt(d)
        w[pre + "tq"] = normal((da, d)) / np.sqrt(d)
        w[pre + "tk"] = normal((da, dm)) / np.sqrt(dm)
        w[pre + "tv"] = normal((d, dm)) / np.sqrt(dm)
        cross = cfg.cross_layer_active(layer)
        if cross:
            w[pre + "lq"] = normal((da, d)) / np.sqrt(d)
            w[pre + "lk"] = normal((da, dm)) / np.sqrt(dm)
            w[pre + "lv"] = normal((d, dm)) / np.sqrt(dm)
        if cfg.fusion == GATED:
            w[pre + "gate_tok"] = np.zeros(d)
            if cross:
                w[pre + "gate_lay"] = np.zeros(d)
        elif cfg.fusion == CONV1D:
            w[pre + "conv_tok"] = cfg.alpha * np.eye(d)
            if cross:
                w[pre + "conv_lay"] = cfg.alpha * np.eye(d)
    w["out_w"] = normal((V, d)) / np.sqrt(d)
    w["out_b"] = np.zeros(V)
    return w


def layer_weights(weights: dict, i: int) -> dict:
    pre = f"layers.{i}."
    return {k[len(pre):]: v for k, v in weights.items() if k.startswith(pre)}


@dataclass
class LayerTrace:
    """Per-layer post-block states and diagnostics of a forward pass.

    ``hidden`` is (L, n, d) for one sequence or (B, L, n, d) for a batch;
    ``tokens`` and ``mask`` are (n,) or (B, n) accordingly.
    """

    hidden: np.ndarray
    tokens: np.ndarray
    mask: np.ndarray | None = None
    c_token: np.ndarray | None = None
    c_layer: np.ndarray | None = None
    token_fired: np.ndarray | None = None
    state_fired: np.ndarray | None = None
    pool_sizes: np.ndarray | None = None
    pools: list | None = None

    def batched(self) -> "LayerTrace":
        """View with a leading batch axis."""
        if self.hidden.ndim == 4:
            return self
        add = lambda a: None if a is None else a[None]
        return LayerTrace(self.hidden[None], self.tokens[None], add(self.mask),
                          add(self.c_token), add(self.c_layer), add(self.token_fired),
                          add(self.state_fired), add(self.pool_sizes), self.pools)


def check_tokens(tokens, vocab: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.size == 0:
        raise InputError("empty token sequence")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise InputError("tokens must be integers")
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise InputError(f"token out of range [0, {vocab})")
    return tokens.astype(np.int64)


def model_forward(cfg: ModelConfig, weights: dict, tokens, keep_pools: bool = False):
    """Token-by-token forward of one sequence.

    Returns ``(logits (n, vocab), LayerTrace)``.
    """
    tokens = check_tokens(tokens, cfg.vocab)
    if tokens.ndim != 1:
        raise InputError("model_forward takes a single 1-d sequence")
    n, L, d = tokens.shape[0], cfg.L, cfg.d
    states = [LayerState.initial(cfg, i + 1, layer_weights(weights, i)) for i in range(L)]
    hidden = np.empty((L, n, d))
    c_tok = np.empty((L, n, d))
    c_lay = np.empty((L, n, d))
    tok_fired = np.zeros((L, n), dtype=bool)
    st_fired = np.zeros((L, n), dtype=bool)
    sizes = np.zeros((L, n), dtype=np.int64)
    snapshots = [] if keep_pools else None
    embed = weights["embed"]
    for t in range(n):
        x = embed[tokens[t]]
        for i in range(L):
            lower = [states[j - 1].pool for j in cfg.lower_layers(i + 1)]
            x, states[i] = layer_forward(cfg, states[i], x, lower)
            info = states[i].info
            hidden[i, t] = x
            c_tok[i, t] = info.c_token
            c_lay[i, t] = info.c_layer
            tok_fired[i, t] = info.token_fired
            st_fired[i, t] = info.state_fired
            sizes[i, t] = len(states[i].pool)
        if keep_pools:
            snapshots.append([s.pool for s in states])
    logits = hidden[L - 1] @ weights["out_w"].T + weights["out_b"]
    trace = LayerTrace(hidden, tokens, None, c_tok, c_lay, tok_fired, st_fired, sizes, snapshots)
    return logits, trace


def save_checkpoint(path, cfg: ModelConfig, weights: dict, extra: dict | None = None) -> Path:
    """Directory with ``manifest.json`` plus one MMT1 file per weight."""
    path = Path(path)
    (path / "weights").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in weights.items():
        fname = f"weights/{name}.mmt"
        save_tensor(path / fname, arr)
        entries.append({"name": name, "file": fname, "shape": list(np.shape(arr))})
    manifest = {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(), "seed": cfg.seed,
                "weights": entries, "extra": extra or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    mfile = path / "manifest.json"
    if not mfile.exists():
        raise InputError(f"no checkpoint at {path}")
    manifest = json.loads(mfile.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{mfile}: unsupported format {manifest.get('format')!r}")
    cfg = ModelConfig.from_dict(manifest["config"])
    weights = {}
    for entry in manifest["weights"]:
        arr = load_tensor(path / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise InputError(f"{entry['file']}: shape {arr.shape} != manifest {entry['shape']}")
        weights[entry["name"]] = arr
    return cfg, weights, manifest
