"""
Choosing alpha and beta by moment matching
==========================================

LLN entries are also log-normal, but their log-variance grows with the
feature-map gains differently from softmax. Calibration measures both curves,
fits a line between them and solves for the gains that give LLN the same
spread as softmax for given input statistics.
"""

import numpy as np

from lln_attention import (
    MatchConfig,
    empirical_temperature,
    fit_broad_constants,
    lln_temperature,
    solve_alpha_beta,
)
from lln_attention.matching import variance_alignment

result = fit_broad_constants(MatchConfig(seed=42))
print(f"fitted line a={result.a:.3f} b={result.b:.3f}  residual={result.residual:.3f}")
print(f"gains for unit inputs: alpha={result.params.alpha:.3f} beta={result.params.beta:.3f}")

print("\n s2     softmax   LLN matched")
for s2, sm, lln in result.grid_table:
    print(f"{s2:5.2f}  {sm:8.3f}  {lln:8.3f}")

# before and after: default gains alpha = beta = 1 are far too cold
rows = variance_alignment(result, MatchConfig(seed=43, n_seeds=4))
for s2, sm, matched, unmatched in rows[::3]:
    print(f"s2={s2:.2f}  softmax {sm:.2f}  matched {matched:.2f}  alpha=beta=1 {unmatched:.2f}")

# temperature closes the loop
rng = np.random.default_rng(9)
q, k = rng.standard_normal((256, 64)), rng.standard_normal((256, 64))
print("\nsoftmax temperature", round(empirical_temperature(q, k), 3),
      " matched LLN temperature", round(lln_temperature(result.params), 3))

# inputs with a different spread get different gains from the same line
p = solve_alpha_beta(result.a, result.b, 2.0, 0.5)
print(f"sigma_q = 2, sigma_k = 0.5: alpha={p.alpha:.3f} beta={p.beta:.3f}")
