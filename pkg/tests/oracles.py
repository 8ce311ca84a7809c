"""Independent reference implementations used as test oracles."""

import numpy as np
from scipy.special import expit


def plain_ssm_lm(weights, L, tokens):
    """Embedding, L diagonal SSM layers with a SiLU residual readout, linear head.

    Written without any package code so it can serve as the ablation oracle.
    """
    Z = weights["embed"][np.asarray(tokens)]
    for i in range(L):
        pre = f"layers.{i}."
        a = np.exp(-np.logaddexp(0.0, weights[pre + "A_raw"]))
        B, C = weights[pre + "B"], weights[pre + "C"]
        h = np.zeros(a.shape[0])
        out = np.empty_like(Z)
        for t in range(Z.shape[0]):
            h = a * h + B @ Z[t]
            y = C @ h
            out[t] = Z[t] + y * expit(y)
        Z = out
    return Z @ weights["out_w"].T + weights["out_b"], Z
