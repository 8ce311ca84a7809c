"""Run configuration: one JSON document, schema-checked before any work starts."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import jsonschema

from .block import FUSIONS
from .errors import ParameterError
from .model import ModelConfig
from .notes import POLICIES
from .training import TrainConfig

OUTPUT_ROOT_ENV = "MEMMAMBA_OUTPUT_ROOT"
SWEEP_AXES = ("fusion", "pooling", "pool_capacity", "window")

DEFAULTS = {
    "output_dir": "runs/default",
    "checkpoint": None,
    "ablate": False,
    "model": ModelConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "task": {
        "kind": "lm",
        "corpus": None,
        "corpus_bytes": 400_000,
        "holdout": 0.1,
        "n_keys": None,
        "payload_len": 4,
    },
    "eval": {
        "ppl_context_mults": [1, 4],
        "ppl_max_tokens": 20_000,
        "passkey_lengths": [64, 128, 256, 512, 1024],
        "passkey_samples": 100,
        "fidelity_samples": 16,
        "fidelity_seq_len": 128,
        "deltas": [8, 16, 32],
        "gaps": [2, 5, 10],
        "temperature": 1.0,
        "lam": 1e-4,
    },
    "theory": {"instances": 1000, "seed": 0, "bibo_steps": 100_000},
    "bench": {
        "kinds": ["memmamba", "quadratic_baseline"],
        "lengths": [256, 512, 1024, 2048, 4096, 8192],
        "samples": 3,
    },
    "sweep": {
        "fusion": list(FUSIONS),
        "pooling": ["max", "mean"],
        "pool_capacity": [10, 25, 50],
        "window": [1, 2, 4],
    },
}

_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_num = {"type": "number"}
_int_list = {"type": "array", "items": _pos_int, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "output_dir": {"type": "string", "minLength": 1},
    "checkpoint": {"type": ["string", "null"]},
    "ablate": {"type": "boolean"},
    "model": _obj({
        "L": _pos_int, "d": _pos_int, "d_s": _pos_int, "d_sum": _pos_int,
        "d_attn": {"type": ["integer", "null"], "minimum": 1},
        "pool_capacity": _pos_int, "pool_policy": {"enum": list(POLICIES)},
        "tau1": _num, "tau2": _num, "p": _pos_int, "g": _pos_int,
        "fusion": {"enum": list(FUSIONS)}, "alpha": {"type": "number", "minimum": 0},
        "vocab": _pos_int, "seed": _int, "pooling": {"enum": ["max", "mean"]}, "window": _pos_int,
    }),
    "train": _obj({
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "clip_norm": {"type": "number", "exclusiveMinimum": 0},
        "accum_steps": _pos_int, "steps": {"type": "integer", "minimum": 0}, "seed": _int,
        "context_len": _pos_int, "batch_size": _pos_int,
    }),
    "task": _obj({
        "kind": {"enum": ["lm", "passkey", "copy"]},
        "corpus": {"type": ["string", "null"]},
        "corpus_bytes": _pos_int,
        "holdout": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n_keys": {"type": ["integer", "null"], "minimum": 1},
        "payload_len": _pos_int,
    }),
    "eval": _obj({
        "ppl_context_mults": _int_list, "ppl_max_tokens": _pos_int,
        "passkey_lengths": _int_list, "passkey_samples": _pos_int,
        "fidelity_samples": _pos_int, "fidelity_seq_len": _pos_int,
        "deltas": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "gaps": _int_list,
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "lam": {"type": "number", "minimum": 0},
    }),
    "theory": _obj({"instances": _pos_int, "seed": _int, "bibo_steps": _pos_int}),
    "bench": _obj({
        "kinds": {"type": "array", "items": {"enum": ["memmamba", "quadratic_baseline"]}, "minItems": 1},
        "lengths": _int_list, "samples": _pos_int,
    }),
    "sweep": _obj({
        "fusion": {"type": "array", "items": {"enum": list(FUSIONS)}, "minItems": 1},
        "pooling": {"type": "array", "items": {"enum": ["max", "mean"]}, "minItems": 1},
        "pool_capacity": _int_list,
        "window": _int_list,
    }),
})


class ConfigError(ParameterError):
    """Invalid run configuration; ``path`` locates the offending key."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is parsed as JSON when possible, else kept as text."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value", "--set")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        keys, value = parse_override(item)
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{'.'.join(keys)} does not name a section", "--set")
        node[keys[-1]] = value
    return doc


def validate(doc: dict) -> dict:
    """Schema check plus the domain checks of the model and train configs."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "$" + "".join(f"[{p!r}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path)
        raise ConfigError(exc.message, path) from None
    try:
        ModelConfig.from_dict(doc["model"])
    except ParameterError as exc:
        raise ConfigError(str(exc), "$.model") from None
    try:
        TrainConfig.from_dict(doc["train"])
    except ParameterError as exc:
        raise ConfigError(str(exc), "$.train") from None
    if doc["task"]["kind"] == "lm" and doc["model"]["vocab"] != 256:
        raise ConfigError("the byte-level corpus needs vocab 256", "$.model.vocab")
    return doc


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the JSON file, then ``--set`` overrides, then validation."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    # unknown keys survive the merge, so the schema still sees and rejects them
    merged = _merge(DEFAULTS, apply_overrides(doc, overrides))
    return validate(merged)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def output_dir(doc: dict) -> Path:
    out = Path(doc["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def model_config(doc: dict) -> ModelConfig:
    cfg = ModelConfig.from_dict(doc["model"])
    return cfg.ablated() if doc["ablate"] else cfg


def train_config(doc: dict) -> TrainConfig:
    return TrainConfig.from_dict(doc["train"])
