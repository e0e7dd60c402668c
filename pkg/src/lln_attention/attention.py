"""Softmax, LLN, block-diagonal and hybrid attention for a single head.

Inputs are plain ``(N, d)`` float arrays (queries, keys, values); every
function returns fresh arrays and never mutates its arguments. All work is
done in float64.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateError, DomainError, ShapeError

METHODS = ("softmax", "lln", "block_diag", "lln_diag")

# Guard for the linear-form denominator; unreachable for finite stabilized inputs.
_MIN_DENOMINATOR = 1e-300

# tokens per chunk in the streaming LLN passes
_TOKEN_CHUNK = 256

# entries per row chunk of the softmax weight matrix (1 MiB of float64)
_ROW_CHUNK_ENTRIES = 1 << 17


def as_seq_tensor(x, name="x"):
    """Validate and convert ``x`` to a finite float64 ``(N, d)`` array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (tokens x dim), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have n >= 1 and d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def _check_qkv(q, k, v):
    q = as_seq_tensor(q, "q")
    k = as_seq_tensor(k, "k")
    v = as_seq_tensor(v, "v")
    if q.shape != k.shape:
        raise ShapeError(f"q and k shapes differ: {q.shape} vs {k.shape}")
    if v.shape[0] != q.shape[0]:
        raise ShapeError(f"v has {v.shape[0]} tokens, q has {q.shape[0]}")
    return q, k, v


def check_attention_matrix(p, atol=1e-9, name="weights"):
    """Raise :class:`DomainError` unless ``p`` is a square row-stochastic matrix.

    Returns the matrix as a float64 array.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"{name} contains non-finite entries")
    if p.min() < -atol or p.max() > 1.0 + atol:
        raise DomainError(f"{name} violates row-stochastic invariant: entries outside [0, 1]")
    worst = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    if worst > atol:
        raise DomainError(
            f"{name} violates row-stochastic invariant: max |row sum - 1| = {worst:.3e}"
        )
    return p


@dataclass(frozen=True)
class LLNParams:
    """Feature-map gains of LLN attention plus the calibration they came from.

    Only ``alpha`` and ``beta`` enter the attention computation. The remaining
    fields are filled in by moment matching and are needed for
    :func:`lln_attention.stats.lln_temperature`; they stay ``None`` for
    hand-built parameter sets.
    """

    alpha: float
    beta: float
    a: Optional[float] = None
    b: Optional[float] = None
    sigma_q: Optional[float] = None
    sigma_k: Optional[float] = None
    sigma_tilde: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                # zero is allowed: uniform attention, used as a fixture
                raise DomainError(f"{name} must be finite and >= 0, got {val}")

    @property
    def is_calibrated(self):
        return None not in (self.a, self.b, self.sigma_q, self.sigma_k, self.sigma_tilde)

    def validate(self, rtol=1e-9):
        """Check the calibration identities; raise :class:`DomainError` on violation."""
        if not self.is_calibrated:
            raise DomainError("LLNParams has no calibration fields to validate")
        if self.alpha <= 0 or self.beta <= 0:
            raise DomainError("calibrated alpha and beta must be strictly positive")
        if self.sigma_q <= 0 or self.sigma_k <= 0 or self.sigma_tilde <= 0:
            raise DomainError("sigma_q, sigma_k and sigma_tilde must be positive")
        s2 = self.sigma_tilde ** 2
        target = (self.sigma_q ** 2 * self.sigma_k ** 2 - self.b) / self.a
        if target <= 0 or not math.isclose(s2, target, rel_tol=rtol):
            raise DomainError(f"sigma_tilde^2 = {s2} does not match (sq^2 sk^2 - b)/a = {target}")
        for lhs in (self.alpha ** 2 * self.sigma_q ** 2, self.beta ** 2 * self.sigma_k ** 2):
            if not math.isclose(lhs, s2 / 2, rel_tol=rtol):
                raise DomainError(f"asymmetric split: {lhs} != sigma_tilde^2 / 2 = {s2 / 2}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        keys = ("alpha", "beta", "a", "b", "sigma_q", "sigma_k", "sigma_tilde")
        return cls(**{k: (None if data.get(k) is None else float(data[k])) for k in keys if k in data})


@dataclass(frozen=True)
class AttnConfig:
    method: str = "softmax"
    block_size: int = 64
    scale_by_sqrt_d: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; expected one of {METHODS}")
        _check_block_size(self.block_size)


def _check_block_size(block_size):
    if int(block_size) != block_size or block_size < 1:
        raise DomainError(f"block_size must be a positive integer, got {block_size}")
    return int(block_size)


# ---------------------------------------------------------------- softmax

def _softmax_rows(scores):
    # in place: the caller owns ``scores``
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores


def softmax_attention(q, k, v):
    """Scaled dot-product attention with the exponential kernel.

    Scores are ``q_i . k_j / sqrt(d)``; the per-row maximum is subtracted
    before exponentiation.

    Returns
    -------
    output : (N, d_v) array
    weights : (N, N) row-stochastic array
    """
    q, k, v = _check_qkv(q, k, v)
    n = q.shape[0]
    scale = 1.0 / math.sqrt(q.shape[1])
    weights = np.empty((n, n))
    # normalize a few rows at a time so the elementwise passes stay in cache
    step = max(1, _ROW_CHUNK_ENTRIES // n)
    for start in range(0, n, step):
        rows = weights[start:start + step]
        np.matmul(q[start:start + step], k.T, out=rows)
        rows *= scale
        _softmax_rows(rows)
    return weights @ v, weights


def softmax_attention_grad(q, k, v, upstream):
    """Gradients of ``<upstream, softmax_attention(q, k, v)[0]>``. Quadratic memory."""
    q, k, v = _check_qkv(q, k, v)
    upstream = _check_upstream(upstream, (q.shape[0], v.shape[1]))
    scale = 1.0 / math.sqrt(q.shape[1])
    _, p = softmax_attention(q, k, v)
    dp = upstream @ v.T
    ds = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return ds @ k * scale, ds.T @ q * scale, p.T @ upstream


def _check_upstream(upstream, shape):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != shape:
        raise ShapeError(f"upstream must have shape {shape}, got {upstream.shape}")
    if not np.all(np.isfinite(upstream)):
        raise DomainError("upstream contains non-finite entries")
    return upstream


# ---------------------------------------------------------------- LLN

def lln_feature_map(x, gain):
    """Elementwise ``exp(gain * x)``.

    Callers that need overflow protection shift ``x`` first; the attention
    functions in this module do that themselves.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("feature map input contains non-finite entries")
    scaled = gain * x
    with np.errstate(over="ignore"):
        out = np.exp(scaled)
    if not np.all(np.isfinite(out)):
        raise DomainError(
            f"feature map overflow: max |gain * x| = {float(np.max(np.abs(scaled))):.6g}"
        )
    return out


def lln_features(q, k, params):
    """Stabilized LLN feature maps ``(phi_q, phi_k)``.

    Each query row is shifted by its own max of ``alpha * q_i``; the keys are
    shifted by one global max of ``beta * k``. Both factors cancel in the
    attention ratio. Per-dimension shifts would not cancel.
    """
    aq = params.alpha * q
    aq -= aq.max(axis=1, keepdims=True)
    bk = params.beta * k
    bk -= bk.max()
    return lln_feature_map(aq, 1.0), lln_feature_map(bk, 1.0)


def lln_attention_materialized(q, k, v, params):
    """LLN attention through the explicit ``N x N`` weight matrix.

    ``weights[i, j] = phi(q_i) . phi(k_j) / sum_l phi(q_i) . phi(k_l)`` with
    ``phi(q) = exp(alpha q)`` and ``phi(k) = exp(beta k)``. No ``1/sqrt(d)``.
    """
    q, k, v = _check_qkv(q, k, v)
    fq, fk = lln_features(q, k, params)
    weights = fq @ fk.T
    den = weights.sum(axis=1, keepdims=True)
    if den.min() < _MIN_DENOMINATOR:
        raise DegenerateError("LLN normalization underflowed to zero")
    weights /= den
    return weights @ v, weights


def _lln_linear_parts(q, k, v, params):
    fq, fk = lln_features(q, k, params)
    kv = fk.T @ v                # (d, d_v)
    ksum = fk.sum(axis=0)        # (d,)
    den = fq @ ksum
    if den.min() < _MIN_DENOMINATOR:
        raise DegenerateError(
            f"LLN normalization degenerate: min denominator {float(den.min()):.3e}"
        )
    out = fq @ kv
    out /= den[:, None]
    return fq, fk, kv, ksum, den, out


def lln_attention_linear(q, k, v, params):
    """LLN attention in the two-pass linear form.

    Accumulates ``S = sum_j phi(k_j) v_j^T`` and ``z = sum_j phi(k_j)`` in one
    pass over the keys, then ``out_i = phi(q_i)^T S / phi(q_i)^T z`` in one
    pass over the queries. Both passes stream over token chunks, so apart from
    the output only ``O(d^2)`` plus one chunk of memory is used and no ``N x N``
    buffer is ever allocated. Time ``O(N d^2)``.
    """
    q, k, v = _check_qkv(q, k, v)
    n, d = q.shape
    # gains are >= 0, so max(beta * k) == beta * max(k) exactly
    key_shift = params.beta * k.max()
    kv = np.zeros((d, v.shape[1]))
    ksum = np.zeros(d)
    for sl in _blocks(n, _TOKEN_CHUNK):
        fk = k[sl] * params.beta
        fk -= key_shift
        np.exp(fk, out=fk)
        kv += fk.T @ v[sl]
        ksum += fk.sum(axis=0)

    out = np.empty((n, v.shape[1]))
    for sl in _blocks(n, _TOKEN_CHUNK):
        fq = q[sl] * params.alpha
        fq -= fq.max(axis=1, keepdims=True)
        np.exp(fq, out=fq)
        den = fq @ ksum
        if den.min() < _MIN_DENOMINATOR:
            raise DegenerateError(
                f"LLN normalization degenerate: min denominator {float(den.min()):.3e}"
            )
        np.matmul(fq, kv, out=out[sl])
        out[sl] /= den[:, None]
    return out


def lln_attention_grad(q, k, v, params, upstream):
    """Analytic gradients of ``L = <upstream, lln_attention_linear(q, k, v)>``.

    Returns ``(dq, dk, dv)`` in ``O(N d^2)`` time and linear memory.
    """
    q, k, v = _check_qkv(q, k, v)
    upstream = _check_upstream(upstream, (q.shape[0], v.shape[1]))
    fq, fk, kv, ksum, den, out = _lln_linear_parts(q, k, v, params)

    g = upstream / den[:, None]
    uo = np.sum(upstream * out, axis=1) / den
    dphi_q = g @ kv.T - uo[:, None] * ksum[None, :]
    dq = params.alpha * fq * dphi_q

    dkv = fq.T @ g
    dksum = -(fq.T @ uo)
    dphi_k = v @ dkv.T + dksum[None, :]
    dk = params.beta * fk * dphi_k
    dv = fk @ dkv
    return dq, dk, dv


# ---------------------------------------------------------------- block-diagonal

def _blocks(n, block_size):
    for start in range(0, n, block_size):
        yield slice(start, min(start + block_size, n))


def block_diag_attention(q, k, v, block_size):
    """Softmax attention computed independently on consecutive token blocks.

    The last block may be shorter and attends only within itself.
    """
    q, k, v = _check_qkv(q, k, v)
    block_size = _check_block_size(block_size)
    n = q.shape[0]
    out = np.empty((n, v.shape[1]))
    weights = np.zeros((n, n))
    for sl in _blocks(n, block_size):
        out[sl], weights[sl, sl] = softmax_attention(q[sl], k[sl], v[sl])
    return out, weights


def block_diag_output(q, k, v, block_size):
    """Output of :func:`block_diag_attention` without the ``N x N`` weight matrix."""
    q, k, v = _check_qkv(q, k, v)
    block_size = _check_block_size(block_size)
    out = np.empty((q.shape[0], v.shape[1]))
    for sl in _blocks(q.shape[0], block_size):
        out[sl] = softmax_attention(q[sl], k[sl], v[sl])[0]
    return out


def block_diag_attention_grad(q, k, v, block_size, upstream):
    q, k, v = _check_qkv(q, k, v)
    block_size = _check_block_size(block_size)
    upstream = _check_upstream(upstream, (q.shape[0], v.shape[1]))
    dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for sl in _blocks(q.shape[0], block_size):
        dq[sl], dk[sl], dv[sl] = softmax_attention_grad(q[sl], k[sl], v[sl], upstream[sl])
    return dq, dk, dv


# ---------------------------------------------------------------- hybrid

def lln_diag_attention(q, k, v, params, block_size):
    """Average of the LLN (linear form) and block-diagonal outputs, 0.5 each."""
    q, k, v = _check_qkv(q, k, v)
    lln = lln_attention_linear(q, k, v, params)
    diag = block_diag_output(q, k, v, block_size)
    return 0.5 * lln + 0.5 * diag


def lln_diag_weights(q, k, params, block_size):
    """Effective ``N x N`` matrix of the hybrid layer, for analysis only."""
    v = np.zeros((q.shape[0], 1))
    _, p_lln = lln_attention_materialized(q, k, v, params)
    _, p_diag = block_diag_attention(q, k, v, block_size)
    return 0.5 * p_lln + 0.5 * p_diag


def lln_diag_attention_grad(q, k, v, params, block_size, upstream):
    g_lln = lln_attention_grad(q, k, v, params, upstream)
    g_diag = block_diag_attention_grad(q, k, v, block_size, upstream)
    return tuple(0.5 * a + 0.5 * b for a, b in zip(g_lln, g_diag))


# ---------------------------------------------------------------- dispatch

def attention_weights(q, k, config, params=None):
    """Materialized attention matrix for ``config.method`` (analysis helper)."""
    q = as_seq_tensor(q, "q")
    k = as_seq_tensor(k, "k")
    v = np.zeros((q.shape[0], 1))
    if config.method == "softmax":
        return softmax_attention(q, k, v)[1]
    if config.method == "block_diag":
        return block_diag_attention(q, k, v, config.block_size)[1]
    params = _require_params(config, params)
    if config.method == "lln":
        return lln_attention_materialized(q, k, v, params)[1]
    return lln_diag_weights(q, k, params, config.block_size)


def attention(q, k, v, config, params=None):
    """Forward output for ``config.method``; LLN methods use the linear form."""
    if config.method == "softmax":
        return softmax_attention(q, k, v)[0]
    if config.method == "block_diag":
        return block_diag_output(q, k, v, config.block_size)
    params = _require_params(config, params)
    if config.method == "lln":
        return lln_attention_linear(q, k, v, params)
    return lln_diag_attention(q, k, v, params, config.block_size)


def attention_grad(q, k, v, config, upstream, params=None):
    if config.method == "softmax":
        return softmax_attention_grad(q, k, v, upstream)
    if config.method == "block_diag":
        return block_diag_attention_grad(q, k, v, config.block_size, upstream)
    params = _require_params(config, params)
    if config.method == "lln":
        return lln_attention_grad(q, k, v, params, upstream)
    return lln_diag_attention_grad(q, k, v, params, config.block_size, upstream)


def _require_params(config, params):
    if params is None:
        raise DomainError(f"method {config.method!r} requires LLNParams")
    return params
