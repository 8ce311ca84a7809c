"""Train a MemMamba / ablation pair on bytes of Python source and compare how
much of the input each keeps: ETMF (token reconstruction from the output
distribution) and ECLMF (linear recoverability of layer l+G from layer l).

    python3 demos/fidelity_probe.py --steps 300
"""

import argparse

import numpy as np

from memmamba import ModelConfig, TrainConfig, fidelity_report, perplexity, train
from memmamba.tasks import CorpusTask, builtin_corpus, split_corpus

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=300)
ap.add_argument("--context", type=int, default=64)
args = ap.parse_args()

tokens = np.frombuffer(builtin_corpus(400_000), np.uint8).astype(np.int64)
train_part, held = split_corpus(tokens, 0.1)
probe = held[:16 * 128].reshape(16, 128)

cfg = ModelConfig(L=3, d=32, d_s=16, d_sum=32, vocab=256, p=2, g=1, window=2, pool_capacity=50)
tc = TrainConfig(lr=3e-3, weight_decay=0.0, accum_steps=1, steps=args.steps, batch_size=8,
                 context_len=args.context)

for name, c in (("memmamba", cfg), ("ablation", cfg.ablated())):
    model = train(c, tc, CorpusTask(train_part, args.context)).model
    _, trace = model.trace(probe)
    w = model.weights
    rep = fidelity_report(trace, w["embed"], w["out_w"], deltas=(8, 32), gaps=(1, 2), bias=w["out_b"])
    ppl = perplexity(model, held[:8001], 4 * args.context)
    print(f"{name:9s} ETMF {rep.etmf:.4f}  ETMF+32 {rep.etmf_delta[32]:.4f}  "
          f"ECLMF {rep.mean_eclmf:.4f}  PPL@4x {ppl:.3f}")
