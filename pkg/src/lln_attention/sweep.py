"""Entropy and spectral gap of several attention kernels across temperatures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import LLNParams, lln_attention_materialized, softmax_attention
from .errors import DegenerateError
from .matching import DEFAULT_GRID, MatchConfig, fit_broad_constants, solve_alpha_beta
from .oracle import KernelSpec, brute_force_attention
from .stats import matrix_entropy, spectral_gap

SWEEP_KERNELS = ("softmax", "lln", "lln-nomatch", "quadratic", "relu")
DEFAULT_TEMPS = (0.25, 0.5, 1.0, 2.0, 4.0)
SWEEP_COLUMNS = ("kernel", "temperature", "entropy_bits", "spectral_gap")


@dataclass
class SweepRow:
    kernel: str
    temperature: float
    entropy_bits: Optional[float]
    spectral_gap: Optional[float]


def _calibration_grid(temps):
    grid = sorted({1.0 / t ** 2 for t in temps if 0.0 < 1.0 / t ** 2 <= 16.0})
    return tuple(grid) if len(grid) >= 2 else DEFAULT_GRID


def kernel_sweep(kernels=SWEEP_KERNELS, temps=DEFAULT_TEMPS, seed=0, n_tokens=256, dim=64,
                 n_draws=1, match_seeds=8):
    """One :class:`SweepRow` per ``(kernel, temperature)`` pair.

    Queries and keys are independent Gaussians with ``sigma_q = sigma_k =
    tau ** -0.5`` so the score temperature is ``tau``; the same underlying
    draws are rescaled for every temperature, and metrics are averaged over
    ``n_draws`` draws. Matched LLN is calibrated once on a grid covering the
    swept score variances ``1 / tau^2``.
    """
    if not kernels or not temps:
        raise ValueError("need at least one kernel and one temperature")
    unknown = set(kernels) - set(SWEEP_KERNELS)
    if unknown:
        raise ValueError(f"unknown kernels {sorted(unknown)}; expected a subset of {SWEEP_KERNELS}")
    rng = np.random.default_rng(seed)
    draws = [(rng.standard_normal((n_tokens, dim)), rng.standard_normal((n_tokens, dim)))
             for _ in range(n_draws)]
    v = np.zeros((n_tokens, 1))

    match = None
    if "lln" in kernels:
        cfg = MatchConfig(sigma_tilde_sq_grid=_calibration_grid(temps), n_tokens=n_tokens,
                          dim=dim, n_seeds=match_seeds, seed=seed)
        match = fit_broad_constants(cfg)

    rows = []
    for kernel in kernels:
        for tau in temps:
            sigma = 1.0 / math.sqrt(tau)
            entropies, gaps = [], []
            try:
                for zq, zk in draws:
                    weights = _weights(kernel, sigma * zq, sigma * zk, v, sigma, match)
                    entropies.append(matrix_entropy(weights))
                    gaps.append(spectral_gap(weights)[1])
            except DegenerateError:
                rows.append(SweepRow(kernel, float(tau), None, None))
                continue
            rows.append(SweepRow(kernel, float(tau), float(np.mean(entropies)), float(np.mean(gaps))))
    return rows


def _weights(kernel, q, k, v, sigma, match):
    if kernel == "softmax":
        return softmax_attention(q, k, v)[1]
    if kernel == "lln":
        params = solve_alpha_beta(match.a, match.b, sigma, sigma)
        return lln_attention_materialized(q, k, v, params)[1]
    if kernel == "lln-nomatch":
        return lln_attention_materialized(q, k, v, LLNParams(1.0, 1.0))[1]
    if kernel in ("quadratic", "relu"):
        return brute_force_attention(q, k, v, KernelSpec(kernel))[1]
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {SWEEP_KERNELS}")


def _fmt(x):
    return "" if x is None else format(x, ".17g")


def write_sweep_csv(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([r.kernel, _fmt(r.temperature), _fmt(r.entropy_bits), _fmt(r.spectral_gap)])
