"""
Attention entries are roughly log-normal
========================================

With Gaussian queries and keys the scores are nearly Gaussian, so softmax
entries are close to log-normal. The normalizing sum shifts the log-mean and,
for short sequences, adds variance of its own.
"""

import numpy as np

from lln_attention import fenton_sum_variance, lognormal_fit, lognormal_predict, softmax_attention
from lln_attention.oracle import mc_lognormal_sum_var

rng = np.random.default_rng(2)
n, d = 1024, 64
q, k = rng.standard_normal((n, d)), rng.standard_normal((n, d))
_, w = softmax_attention(q, k, np.zeros((n, 1)))

mu, var, ks = lognormal_fit(w)
mu_hat, var_hat = lognormal_predict(n, 1.0)
print(f"fitted    mu={mu:.3f}  var={var:.3f}  KS={ks:.4f}")
print(f"predicted mu={mu_hat:.3f}  var={var_hat:.3f}")

# how good is the two-moment approximation for the log-variance of a sum?
print("\n sigma^2    n   Monte Carlo  Fenton  rel.err")
for s2 in (0.2, 0.6, 1.0):
    for terms in (8, 64, 512):
        mc = mc_lognormal_sum_var(s2, terms, 100_000, seed=3)
        fw = fenton_sum_variance(s2, terms)
        print(f"{s2:8.1f} {terms:4d} {mc:12.5f} {fw:7.5f} {fw / mc - 1:+8.3f}")
# short sums of wide log-normals are skewed, and the approximation drifts there
