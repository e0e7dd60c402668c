"""
Softmax and LLN attention side by side
======================================

Both mechanisms turn queries and keys into a row-stochastic weight matrix.
Softmax needs the full N x N score matrix; LLN factorizes through feature
maps exp(alpha q), exp(beta k) and can be evaluated without ever building it.
"""

import numpy as np

from lln_attention import (
    LLNParams,
    check_attention_matrix,
    lln_attention_linear,
    lln_attention_materialized,
    softmax_attention,
)
from lln_attention.oracle import KernelSpec, brute_force_attention

rng = np.random.default_rng(0)
n, d = 256, 32
q, k, v = (rng.standard_normal((n, d)) for _ in range(3))

# softmax: scores q.k / sqrt(d), normalized per row
out_sm, w_sm = softmax_attention(q, k, v)
check_attention_matrix(w_sm)
print("softmax weights", w_sm.shape, "row sums in", w_sm.sum(1).min(), w_sm.sum(1).max())

# LLN with moderate gains
params = LLNParams(alpha=1.5, beta=1.5)
out_mat, w_lln = lln_attention_materialized(q, k, v, params)
out_lin = lln_attention_linear(q, k, v, params)
print("LLN materialized vs linear, max |diff|:", np.abs(out_mat - out_lin).max())

# both agree with a deliberately naive reference
ref_sm, _ = brute_force_attention(q, k, v, KernelSpec("exp_scaled"))
ref_lln, _ = brute_force_attention(q, k, v, KernelSpec("elementwise_exp_product", 1.5, 1.5))
print("softmax vs brute force:", np.abs(out_sm - ref_sm).max())
print("LLN vs brute force:    ", np.abs(out_lin - ref_lln).max())

# the two weight matrices have different shapes of distribution
for name, w in (("softmax", w_sm), ("LLN", w_lln)):
    print(f"{name:8s} largest weight {w.max():.4f}  median weight {np.median(w):.2e}")
