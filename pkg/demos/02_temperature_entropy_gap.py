"""
Temperature, entropy and spectral gap
=====================================

Scaling the inputs down raises the effective temperature of softmax
attention. Hotter attention spreads mass more evenly (higher entropy) and
mixes faster (larger spectral gap).
"""

import numpy as np

from lln_attention import (
    empirical_temperature,
    matrix_entropy,
    softmax_attention,
    spectral_gap,
    theoretical_temperature,
)

rng = np.random.default_rng(1)
n, d = 256, 64
q0, k0 = rng.standard_normal((n, d)), rng.standard_normal((n, d))
v = np.zeros((n, 1))

print(" scale   tau_emp  tau_theory  entropy(bits)  gap")
for scale in (2.0, 1.0, 0.5, 0.25):
    q, k = scale * q0, scale * k0
    _, w = softmax_attention(q, k, v)
    tau = empirical_temperature(q, k)
    tau_th = theoretical_temperature(scale, scale)
    print(f"{scale:6.2f}  {tau:8.3f}  {tau_th:10.3f}  {matrix_entropy(w):13.3f}  {spectral_gap(w)[1]:.3f}")

print("upper bound on entropy: log2 N =", np.log2(n))

# spectral gap above the dense cutoff switches to subspace iteration
q, k = rng.standard_normal((3000, 16)), rng.standard_normal((3000, 16))
_, w = softmax_attention(q, k, np.zeros((3000, 1)))
print("N=3000 |lambda_2| iterative:", spectral_gap(w)[0], " dense:", spectral_gap(w, method="dense")[0])
