"""Why plain SSM memory fades, and what the bounds say about it.

Runs in a few seconds:

    python3 demos/bounds_tour.py
"""

import numpy as np

from memmamba.ssm import SSMParams, bound_for, empirical_contribution
from memmamba.theory import (bibo_bound, equal_budget_lengths, layered_decay, pooling_error_check,
                             recall_bounds, simulate_bibo)

rng = np.random.default_rng(0)

# One diagonal SSM layer: how much of token t-k is still visible at step t?
p = SSMParams(np.array([0.9, 0.8, 0.5]), rng.standard_normal((3, 4)), rng.standard_normal((4, 3)))
probe = rng.standard_normal(4)
print("distance  measured   bound")
for k in (0, 5, 10, 25, 50, 100):
    print(f"{k:8d}  {empirical_contribution(p, k, probe):.3e}  {bound_for(p, probe, k):.3e}")

# Stacking layers compounds the decay.
print("\nfour layers at ||A|| = 0.9, tau = 10:", layered_decay([0.9] * 4, 10, 1.0))

# Summaries lose at most sqrt(n d) * Delta when broadcast back.
H = rng.standard_normal((12, 4))
c = pooling_error_check(H, 3)
print(f"\npooling error {c.lhs:.3f} <= bound {c.rhs:.3f}")

# The state stays bounded however long the input runs.
A, B = rng.uniform(0, 0.95, 4), rng.standard_normal((4, 3))
peak = simulate_bibo(A, B, 1.0, 0.8, 1.0, steps=20_000, rng=rng)[0]
print(f"peak state norm {peak:.3f} <= {bibo_bound(A.max(), np.linalg.norm(B, 2), 1.0, 0.8, 1.0):.3f}")

ub, lb = recall_bounds(0.9, 1.0, 1.0, 0.7, 100, 0.8, 0.1)
print(f"\nrecall at distance 100: SSM at most {ub:.1e}, summary attention at least {lb:.2f}")

n_quad, n_lin = equal_budget_lengths(1e12, 10, 1e3, 10, 1e3)
print(f"same budget: quadratic reaches {n_quad:.0f} tokens, linear {n_lin:.0f}")
