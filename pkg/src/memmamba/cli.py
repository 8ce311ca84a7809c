"""Command-line entry point: ``memmamba <command> --config run.json [--set key=value ...]``.

Exit codes: 0 success, 1 a check failed, 2 bad usage or configuration,
3 missing or unusable input (checkpoint, corpus), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .batched import MemMambaModel
from .bench import benchmark_forward, fit_scaling_exponent, records_to_csv, records_to_long_csv
from .config import (SWEEP_AXES, ConfigError, config_hash, load_config, model_config, output_dir,
                     train_config)
from .errors import InputError, MemMambaError, NumericalError
from .fidelity import fidelity_report, rows_to_csv
from .model import load_checkpoint, rng_for
from .tasks import (CopyTask, CorpusTask, PasskeyTask, builtin_corpus, dump_jsonl, eval_passkey,
                    gen_passkey, load_corpus, split_corpus)
from .theory import BoundCheck, checks_to_csv, equal_budget_lengths, recall_bounds, run_bound_suite
from .training import perplexity, train

log = logging.getLogger("memmamba")

COMMANDS = ("train", "eval-ppl", "passkey", "fidelity", "theory-check", "bench", "sweep")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    rev = out.stdout.strip()
    return f"v{__version__}+g{rev}" if out.returncode == 0 and rev else f"v{__version__}"


def write_manifest(out: Path, command: str, doc: dict, outputs) -> Path:
    manifest = {
        "command": command,
        "config": doc,
        "config_hash": config_hash(doc),
        "seed": {"model": doc["model"]["seed"], "train": doc["train"]["seed"]},
        "revision": revision(),
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- data ------------------------------------------------------------------------

def corpus_tokens(doc) -> np.ndarray:
    task = doc["task"]
    if task["corpus"]:
        return load_corpus(task["corpus"])
    data = builtin_corpus(task["corpus_bytes"])
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def corpus_splits(doc):
    return split_corpus(corpus_tokens(doc), doc["task"]["holdout"])


def build_task(doc):
    kind = doc["task"]["kind"]
    n = doc["train"]["context_len"]
    vocab = doc["model"]["vocab"]
    if kind == "lm":
        return CorpusTask(corpus_splits(doc)[0], n)
    if kind == "passkey":
        return PasskeyTask(n, vocab, doc["task"]["n_keys"])
    return CopyTask(n, doc["task"]["payload_len"], vocab)


def load_model(doc) -> MemMambaModel:
    path = Path(doc["checkpoint"]) if doc["checkpoint"] else output_dir(doc) / "checkpoint"
    cfg, weights, _ = load_checkpoint(path)
    return MemMambaModel(cfg, weights)


def passkey_samples(doc, length: int):
    seeds = rng_for(doc["train"]["seed"], "eval").integers(0, 2**62, doc["eval"]["passkey_samples"])
    return [gen_passkey(length, doc["model"]["vocab"], int(s) + length, doc["task"]["n_keys"])
            for s in seeds]


# --- commands --------------------------------------------------------------------

def cmd_train(doc, out: Path, args) -> int:
    result = train(model_config(doc), train_config(doc), build_task(doc), out,
                   progress=lambda s, l: log.info("step %d loss %.4f", s, l))
    write_manifest(out, "train", doc, ["train_log.csv", "checkpoint/manifest.json"])
    print(f"trained {len(result.log)} steps; checkpoint at {result.checkpoint}")
    return 0


def heldout_ppl(model, doc, context_len: int) -> float:
    held = corpus_splits(doc)[1][: doc["eval"]["ppl_max_tokens"] + 1]
    return perplexity(model, held, context_len)


def cmd_eval_ppl(doc, out: Path, args) -> int:
    model = load_model(doc)
    rows = []
    for mult in doc["eval"]["ppl_context_mults"]:
        ctx = doc["train"]["context_len"] * mult
        rows.append((ctx, mult, heldout_ppl(model, doc, ctx)))
    (out / "ppl.csv").write_text(_csv(("context_len", "context_mult", "ppl"), rows))
    write_manifest(out, "eval-ppl", doc, ["ppl.csv"])
    for ctx, _, ppl in rows:
        print(f"context {ctx}: ppl {ppl:.4f}")
    return 0


def cmd_passkey(doc, out: Path, args) -> int:
    model = load_model(doc)
    rows, dumped = [], []
    for n in doc["eval"]["passkey_lengths"]:
        samples = passkey_samples(doc, n)
        dumped += samples
        acc = eval_passkey(model, samples, [n])[n]
        rows.append((n, acc, len(samples)))
        print(f"length {n}: accuracy {acc:.3f}")
    (out / "passkey.csv").write_text(_csv(("length", "accuracy", "samples"), rows))
    dump_jsonl(dumped, out / "passkey_samples.jsonl")
    write_manifest(out, "passkey", doc, ["passkey.csv", "passkey_samples.jsonl"])
    return 0


def fidelity_tokens(doc) -> np.ndarray:
    ev = doc["eval"]
    n, count = ev["fidelity_seq_len"], ev["fidelity_samples"]
    if doc["task"]["kind"] == "lm":
        held = corpus_splits(doc)[1]
        if len(held) < n * count:
            raise InputError("held-out corpus too short for the fidelity sample")
        return held[: n * count].reshape(count, n)
    seeds = rng_for(doc["train"]["seed"], "eval").integers(0, 2**62, count)
    return np.array([gen_passkey(n, doc["model"]["vocab"], int(s), doc["task"]["n_keys"]).tokens
                     for s in seeds])


def cmd_fidelity(doc, out: Path, args) -> int:
    model = load_model(doc)
    ev = doc["eval"]
    _, trace = model.trace(fidelity_tokens(doc))
    w = model.weights
    report = fidelity_report(trace, w["embed"], w["out_w"], ev["deltas"], ev["gaps"],
                             ev["temperature"], ev["lam"], bias=w["out_b"])
    model_id = "ablation" if doc["ablate"] else "memmamba"
    (out / "fidelity.json").write_text(report.to_json())
    (out / "fidelity.csv").write_text(rows_to_csv(report.rows(model_id)))
    write_manifest(out, "fidelity", doc, ["fidelity.json", "fidelity.csv"])
    print(f"ETMF {report.etmf:.4f}; mean ECLMF {report.mean_eclmf:.4f}")
    return 0


def worked_checks() -> list[BoundCheck]:
    """The textbook recall and budget examples, phrased as inequalities."""
    ub, _ = recall_bounds(0.9, 1.0, 1.0, 1.0, 100, 0.8, 0.1)
    _, lb = recall_bounds(0.9, 1.0, 1.0, 0.7, 100, 0.8, 0.1)
    n_t, n_o = equal_budget_lengths(1e12, 10, 1e3, 10, 1e3)
    n_t4, n_o4 = equal_budget_lengths(4e12, 10, 1e3, 10, 1e3)
    return [
        BoundCheck.of("recall_ssm_k100", ub, 0.01),
        BoundCheck.of("recall_summary_attention", 0.9, lb),
        BoundCheck.of("budget_quadratic_x4", abs(n_t4 - 2 * n_t), 0.0),
        BoundCheck.of("budget_linear_x4", abs(n_o4 - 4 * n_o), 0.0),
        BoundCheck.of("budget_linear_longer", n_t, n_o),
    ]


def cmd_theory(doc, out: Path, args) -> int:
    th = doc["theory"]
    checks = run_bound_suite(th["instances"], th["seed"], th["bibo_steps"]) + worked_checks()
    (out / "theory.csv").write_text(checks_to_csv(checks))
    write_manifest(out, "theory-check", doc, ["theory.csv"])
    failed = [c.name for c in checks if not c.holds]
    print(f"{len(checks) - len(failed)}/{len(checks)} bound checks hold")
    for name in failed:
        print(f"FAILED {name}")
    return 1 if failed else 0


def cmd_bench(doc, out: Path, args) -> int:
    b = doc["bench"]
    cfg = model_config(doc)
    records = []
    fits = []
    for kind in b["kinds"]:
        recs = benchmark_forward(kind, b["lengths"], b["samples"], cfg, doc["model"]["seed"])
        records += recs
        if len(recs) >= 4:
            fits.append((kind, fit_scaling_exponent(recs)))
    (out / "bench.csv").write_text(records_to_csv(records))
    (out / "bench_long.csv").write_text(records_to_long_csv(records))
    (out / "bench_fit.csv").write_text(_csv(("model_id", "exponent"), fits))
    write_manifest(out, "bench", doc, ["bench.csv", "bench_long.csv", "bench_fit.csv"])
    for kind, slope in fits:
        print(f"{kind}: exponent {slope:.3f}")
    return 0


def sweep_points(doc, axes):
    values = [doc["sweep"][a] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def cmd_sweep(doc, out: Path, args) -> int:
    axes = list(dict.fromkeys(args.axis or ["fusion"]))
    if doc["task"]["kind"] != "lm":
        raise ConfigError("sweeps run on the byte-level corpus task", "$.task.kind")
    rows = []
    for point in sweep_points(doc, axes):
        sub = json.loads(json.dumps(doc))
        sub["model"].update(point)
        name = "_".join(f"{k}-{v}" for k, v in point.items())
        result = train(model_config(sub), train_config(sub), build_task(sub), out / "points" / name)
        ppl = heldout_ppl(result.model, sub, sub["train"]["context_len"])
        rows.append(tuple(point[a] for a in axes) + (result.log[-1][1] if result.log else float("nan"), ppl))
        print(f"{name}: ppl {ppl:.4f}")
    (out / "sweep.csv").write_text(_csv(tuple(axes) + ("final_loss", "ppl"), rows))
    write_manifest(out, "sweep", doc, ["sweep.csv"])
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval-ppl": cmd_eval_ppl,
    "passkey": cmd_passkey,
    "fidelity": cmd_fidelity,
    "theory-check": cmd_theory,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memmamba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. model.fusion=gated")
        if name == "sweep":
            p.add_argument("--axis", action="append", choices=SWEEP_AXES,
                           help="sweep axis; repeat for a grid (default: fusion)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        doc = load_config(args.config, args.set)
        out = output_dir(doc)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](doc, out, args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except MemMambaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
