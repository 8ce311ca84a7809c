"""Synthetic long-range tasks and a byte-level corpus loader.

Token layout shared by the generators:

* ``0`` marker / separator / document start
* ``1`` query
* a small key range (passkeys, needle keys)
* the remaining ids are filler
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParameterError

MARKER = 0
QUERY = 1
FIRST_FREE = 2


@dataclass
class TaskSample:
    tokens: list[int]
    target: list[int]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"tokens": list(map(int, self.tokens)),
                           "target": list(map(int, self.target)), "meta": self.meta},
                          sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TaskSample":
        d = json.loads(line)
        return cls(d["tokens"], d["target"], d.get("meta", {}))


def dump_jsonl(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


def load_jsonl(path) -> list[TaskSample]:
    with open(path) as fh:
        return [TaskSample.from_json(line) for line in fh if line.strip()]


# --- passkey -----------------------------------------------------------------

def passkey_layout(vocab: int, n_keys: int | None = None) -> tuple[range, range]:
    """(passkey ids, filler ids) for a vocabulary."""
    if vocab < 16:
        raise ParameterError(f"passkey task needs vocab >= 16, got {vocab}")
    n_keys = n_keys or (vocab - FIRST_FREE) // 4
    if not 1 <= n_keys <= vocab - FIRST_FREE - 2:
        raise ParameterError(f"cannot reserve {n_keys} passkeys in a vocab of {vocab}")
    return range(FIRST_FREE, FIRST_FREE + n_keys), range(FIRST_FREE + n_keys, vocab)


def _passkey_arrays(rng, B, seq_len, vocab, n_keys):
    keys, filler = passkey_layout(vocab, n_keys)
    tokens = rng.integers(filler.start, filler.stop, size=(B, seq_len))
    pos = rng.integers(1, seq_len - 2, size=B)          # passkey index in [1, n-3]
    key = rng.integers(keys.start, keys.stop, size=B)
    rows = np.arange(B)
    tokens[rows, pos - 1] = MARKER
    tokens[rows, pos] = key
    tokens[:, -2] = QUERY
    tokens[:, -1] = MARKER
    return tokens, key, pos


def gen_passkey(seq_len: int, vocab: int, seed: int, n_keys: int | None = None) -> TaskSample:
    """Filler with ``MARKER passkey`` hidden at a uniform position and the
    prompt ``QUERY MARKER`` at the end; the answer is due at the last position."""
    if seq_len < 8:
        raise ParameterError(f"seq_len must be >= 8, got {seq_len}")
    rng = np.random.default_rng(seed)
    tokens, key, pos = _passkey_arrays(rng, 1, seq_len, vocab, n_keys)
    p = int(pos[0])
    return TaskSample(tokens[0].tolist(), [int(key[0])],
                      {"position": p, "distance": seq_len - 1 - p, "answer_index": seq_len - 1})


@dataclass(frozen=True)
class PasskeyTask:
    seq_len: int
    vocab: int
    n_keys: int | None = None

    def sample(self, rng, batch_size):
        tokens, key, _ = _passkey_arrays(rng, batch_size, self.seq_len, self.vocab, self.n_keys)
        targets = np.zeros_like(tokens)
        targets[:, -1] = key
        weights = np.zeros(tokens.shape)
        weights[:, -1] = 1.0
        return tokens, targets, weights


# --- copy --------------------------------------------------------------------

def gen_copy(seq_len: int, payload_len: int, vocab: int, seed: int) -> TaskSample:
    """``payload SEP filler QUERY payload[:-1]``; the model reproduces the payload
    starting at the QUERY position."""
    if not 1 <= payload_len < seq_len / 2:
        raise ParameterError("need 1 <= payload_len < seq_len / 2")
    if vocab < FIRST_FREE + 2:
        raise ParameterError("vocab too small for the copy task")
    rng = np.random.default_rng(seed)
    payload = rng.integers(FIRST_FREE, vocab, payload_len)
    filler = rng.integers(FIRST_FREE, vocab, seq_len - 2 * payload_len - 1)
    tokens = np.concatenate([payload, [MARKER], filler, [QUERY], payload[:-1]])
    start = seq_len - payload_len
    return TaskSample(tokens.tolist(), payload.tolist(), {"answer_start": start})


@dataclass(frozen=True)
class CopyTask:
    seq_len: int
    payload_len: int
    vocab: int

    def sample(self, rng, batch_size):
        seeds = rng.integers(0, 2**63 - 1, batch_size)
        samples = [gen_copy(self.seq_len, self.payload_len, self.vocab, int(s)) for s in seeds]
        tokens = np.array([s.tokens for s in samples])
        targets = np.zeros_like(tokens)
        weights = np.zeros(tokens.shape)
        start = samples[0].meta["answer_start"]
        targets[:, start:] = np.array([s.target for s in samples])
        weights[:, start:] = 1.0
        return tokens, targets, weights


# --- miniature document retrieval --------------------------------------------

def gen_docretrieval(n_needles: int, n_noise: int, doc_len: int, vocab: int, seed: int) -> TaskSample:
    """Documents ``MARKER key attr filler...``; the query names one needle key
    and the answer is that needle's attribute.  Noise documents use keys that
    are never queried."""
    if doc_len < 3 or n_needles < 1 or n_noise < 0:
        raise ParameterError("need doc_len >= 3, n_needles >= 1, n_noise >= 0")
    n_keys = n_needles + n_noise
    n_attr = max(2, (vocab - FIRST_FREE - n_keys) // 2)
    if FIRST_FREE + n_keys + n_attr + 1 > vocab:
        raise ParameterError(f"vocab {vocab} too small for {n_keys} documents")
    rng = np.random.default_rng(seed)
    keys = FIRST_FREE + rng.permutation(n_keys)
    attr_lo = FIRST_FREE + n_keys
    filler_lo = attr_lo + n_attr
    attrs = rng.integers(attr_lo, filler_lo, n_keys)
    order = rng.permutation(n_keys)
    docs = []
    for j in order:
        body = rng.integers(filler_lo, vocab, doc_len - 3) if filler_lo < vocab else np.zeros(0, int)
        docs.append(np.concatenate([[MARKER, keys[j], attrs[j]], body]))
    asked = int(rng.integers(0, n_needles))
    tokens = np.concatenate(docs + [[QUERY, keys[asked]]])
    return TaskSample(tokens.tolist(), [int(attrs[asked])],
                      {"n_needles": n_needles, "n_noise": n_noise, "answer_index": len(tokens) - 1})


# --- byte corpus ---------------------------------------------------------------

def load_corpus(path) -> np.ndarray:
    """Byte-level tokens (vocab 256) of a file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"corpus file not found: {path}")
    data = path.read_bytes()
    if not data:
        raise InputError(f"corpus file is empty: {path}")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def builtin_corpus(max_bytes: int = 1_000_000) -> bytes:
    """Concatenated standard-library sources, in sorted file order."""
    root = Path(sys.modules["json"].__file__).resolve().parent.parent
    out = bytearray()
    for f in sorted(root.glob("*.py")):
        out += f.read_bytes()
        if len(out) >= max_bytes:
            break
    return bytes(out[:max_bytes])


def iter_windows(tokens, context_len: int):
    """Non-overlapping windows that cover every token exactly once."""
    if context_len < 1:
        raise ParameterError("context_len must be >= 1")
    for start in range(0, len(tokens), context_len):
        yield tokens[start:start + context_len]


def split_corpus(tokens, holdout: float = 0.1):
    cut = int(round(len(tokens) * (1.0 - holdout)))
    return tokens[:cut], tokens[cut:]


@dataclass(frozen=True)
class CorpusTask:
    tokens: np.ndarray
    context_len: int

    def sample(self, rng, batch_size):
        n = self.context_len
        if len(self.tokens) <= n:
            raise InputError("corpus shorter than one training window")
        starts = rng.integers(0, len(self.tokens) - n, batch_size)
        idx = starts[:, None] + np.arange(n + 1)
        chunk = self.tokens[idx]
        return chunk[:, :-1], chunk[:, 1:], np.ones((batch_size, n))


# --- evaluation --------------------------------------------------------------

def eval_passkey(model, samples, lengths=None, batch_size: int = 64) -> dict[int, float]:
    """Accuracy of ``argmax`` at the last position, grouped by sequence length.

    ``model`` maps a (B, n) token array to (B, n, vocab) logits.
    """
    groups: dict[int, list[TaskSample]] = {}
    for s in samples:
        groups.setdefault(len(s.tokens), []).append(s)
    lengths = sorted(groups) if lengths is None else list(lengths)
    acc = {}
    for n in lengths:
        group = groups.get(n, [])
        if not group:
            continue
        hits = 0
        for i in range(0, len(group), batch_size):
            chunk = group[i:i + batch_size]
            logits = model(np.array([s.tokens for s in chunk]))
            pred = np.argmax(logits[:, -1, :], axis=-1)
            hits += int(np.sum(pred == np.array([s.target[0] for s in chunk])))
        acc[n] = hits / len(group)
    return acc
