"""
Which kernels respond to temperature?
=====================================

Sweep the temperature for several normalized kernels and watch the entropy.
Exponential kernels react; polynomial and ReLU kernels are scale invariant
after row normalization, so they cannot be made sharper or smoother this way.
"""

import sys

from lln_attention.sweep import kernel_sweep, write_sweep_csv

rows = kernel_sweep(seed=0, n_tokens=128, dim=32, n_draws=2)
write_sweep_csv(rows, sys.stdout)

print()
for kernel in ("softmax", "lln", "lln-nomatch", "quadratic", "relu"):
    h = [r.entropy_bits for r in rows if r.kernel == kernel]
    print(f"{kernel:12s} entropy range {max(h) - min(h):.3f} bits")
