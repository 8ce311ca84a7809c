"""Forward latency against sequence length: the recurrent model grows
linearly, full attention quadratically.

    python3 demos/scaling.py
"""

from memmamba.bench import MEMMAMBA, QUADRATIC_BASELINE, benchmark_forward, fit_scaling_exponent
from memmamba.model import ModelConfig

lengths = [256, 512, 1024, 2048, 4096]
cfg = ModelConfig(L=2, d=32, d_s=16, d_sum=32, vocab=256)
for kind in (MEMMAMBA, QUADRATIC_BASELINE):
    recs = benchmark_forward(kind, lengths, samples=3, cfg=cfg)
    print(f"{kind}: exponent {fit_scaling_exponent(recs):.2f}")
    for r in recs:
        print(f"  n={r.seq_len:5d}  {r.wall_ms:9.2f} ms  peak {r.peak_state_bytes / 1e6:7.2f} MB")
