"""Brute-force references used to check the fast code paths.

Nothing here imports from :mod:`lln_attention.attention`; every oracle is a
separate, deliberately naive implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError, ShapeError

KERNELS = ("exp_scaled", "elementwise_exp_product", "quadratic", "relu")


@dataclass(frozen=True)
class KernelSpec:
    """Pairwise kernel ``kappa(q, k)`` evaluated on ``(gain_q * q, gain_k * k)``.

    ``exp_scaled``               exp(q . k / sqrt(d))
    ``elementwise_exp_product``  sum_l exp(q_l) exp(k_l)
    ``quadratic``                (q . k / sqrt(d))^2
    ``relu``                     max(0, q . k / sqrt(d))
    """

    kind: str
    gain_q: float = 1.0
    gain_k: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise DomainError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if not (math.isfinite(self.gain_q) and math.isfinite(self.gain_k)):
            raise DomainError("kernel gains must be finite")


def kernel_matrix(q, k, spec):
    """Full ``N x N`` matrix of unnormalized kernel values."""
    q = np.asarray(q, dtype=np.float64) * spec.gain_q
    k = np.asarray(k, dtype=np.float64) * spec.gain_k
    d = q.shape[1]
    if spec.kind == "elementwise_exp_product":
        # (N, N, d) broadcast: no factorization through feature sums
        return np.sum(np.exp(q)[:, None, :] * np.exp(k)[None, :, :], axis=2)
    dots = np.einsum("il,jl->ij", q, k) / math.sqrt(d)
    if spec.kind == "exp_scaled":
        with np.errstate(over="ignore"):
            return np.exp(dots)
    if spec.kind == "quadratic":
        return dots ** 2
    return np.maximum(dots, 0.0)


def brute_force_attention(q, k, v, spec):
    """Nadaraya-Watson attention with an explicit kernel matrix.

    Raises :class:`DegenerateError` when a row of kernel values sums to zero
    (e.g. a ReLU row with no positive score) and :class:`DomainError` when a
    kernel value overflows.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or q.shape != k.shape or v.ndim != 2 or v.shape[0] != q.shape[0]:
        raise ShapeError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    kern = kernel_matrix(q, k, spec)
    if not np.all(np.isfinite(kern)):
        raise DomainError(f"{spec.kind} kernel overflowed")
    n = q.shape[0]
    weights = np.empty((n, n))
    for i in range(n):
        total = 0.0
        for j in range(n):
            total += kern[i, j]
        if not total > 0.0:
            raise DegenerateError(f"{spec.kind} kernel row {i} has non-positive sum {total}")
        weights[i] = kern[i] / total
    return weights @ v, weights


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = f(x)
        flat[idx] = orig - h
        f_minus = f(x)
        flat[idx] = orig
        gflat[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def mc_lognormal_sum_var(sigma_sq, n, trials, seed, chunk=2_000_000):
    """Sample variance of ``ln(sum_{i<n} exp(Z_i))`` with ``Z_i ~ N(0, sigma_sq)``.

    Trials are drawn in chunks of about ``chunk`` normals; the result depends
    only on ``(sigma_sq, n, trials, seed)``.
    """
    if trials < 100:
        raise DomainError("mc_lognormal_sum_var needs trials >= 100")
    if n < 1 or sigma_sq < 0:
        raise DomainError("need n >= 1 and sigma_sq >= 0")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(sigma_sq)
    rows = max(1, chunk // n)
    logs = np.empty(trials)
    for start in range(0, trials, rows):
        m = min(rows, trials - start)
        z = rng.standard_normal((m, n))
        z *= sd
        logs[start:start + m] = np.log(np.exp(z).sum(axis=1))
    return float(np.var(logs, ddof=1))


def dense_second_eigenvalue(p):
    """``|lambda_2|`` of the full matrix from an unshifted dense eigensolve."""
    mods = np.sort(np.abs(np.linalg.eigvals(np.asarray(p, dtype=np.float64))))[::-1]
    if mods.size < 2:
        raise ShapeError("need at least a 2 x 2 matrix")
    return float(mods[1])
