"""Diagnostics of attention matrices: temperature, entropy, spectral gap,
log-normal fits and sums of log-normals."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special
from scipy import stats as sps

from .attention import LLNParams, as_seq_tensor, check_attention_matrix
from .errors import ConvergenceError, DegenerateError, DomainError, ShapeError

REGIMES = ("narrow", "moderate", "broad")

DENSE_EIG_MAX_N = 2048


# ---------------------------------------------------------------- temperature

def attention_scores(q, k):
    q = as_seq_tensor(q, "q")
    k = as_seq_tensor(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q and k dims differ: {q.shape[1]} vs {k.shape[1]}")
    return q @ k.T / math.sqrt(q.shape[1])


def empirical_temperature(q, k):
    """``1 / std`` (population) of all ``N x N`` scores ``q_i . k_j / sqrt(d)``."""
    scores = attention_scores(q, k)
    if scores.size < 2:
        raise DegenerateError("need at least two scores to estimate a temperature")
    sd = float(np.std(scores))
    if sd == 0.0:
        raise DegenerateError("scores have zero variance; temperature is infinite")
    return 1.0 / sd


def theoretical_temperature(sigma_q, sigma_k, c_cross=0.0):
    radicand = sigma_q ** 2 * sigma_k ** 2 + c_cross
    if not radicand > 0:
        raise DomainError(f"sigma_q^2 sigma_k^2 + C_cross = {radicand} must be positive")
    return 1.0 / math.sqrt(radicand)


def cross_covariance(q, k):
    """``Cov(q^2, k^2) - Cov(q, k)^2`` over entries paired by (token, dim).

    Zero in expectation for independent queries and keys; equal to ``2 s^4 -
    s^4`` when ``k = q`` with entry variance ``s^2``.
    """
    q = as_seq_tensor(q, "q").ravel()
    k = as_seq_tensor(k, "k").ravel()
    if q.size != k.size:
        raise ShapeError("q and k must have the same shape to pair entries")

    def cov(x, y):
        return float(np.mean((x - x.mean()) * (y - y.mean())))

    return cov(q * q, k * k) - cov(q, k) ** 2


def lln_temperature(params: LLNParams):
    if params.a is None or params.b is None or params.sigma_q is None or params.sigma_k is None:
        raise DomainError("lln_temperature needs calibrated params (a, b, sigma_q, sigma_k)")
    spread = params.alpha ** 2 * params.sigma_q ** 2 + params.beta ** 2 * params.sigma_k ** 2
    radicand = params.a * spread + params.b
    if not radicand > 0:
        raise DomainError(f"a (alpha^2 sq^2 + beta^2 sk^2) + b = {radicand} must be positive")
    return 1.0 / math.sqrt(radicand)


# ---------------------------------------------------------------- entropy / variance

def matrix_entropy(p):
    """Mean row entropy in bits, with ``0 log 0 = 0``."""
    p = check_attention_matrix(p)
    return float(special.entr(p).sum() / (p.shape[0] * math.log(2.0)))


def row_variances(p):
    """Per-row variance of the entries around ``1/N``."""
    p = np.asarray(p, dtype=np.float64)
    return np.mean((p - 1.0 / p.shape[1]) ** 2, axis=1)


def softmax_temperature_rows(x, tau):
    """Row-wise ``softmax(x / tau)``."""
    z = np.asarray(x, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def centered_moment_identities(x, tau):
    """Return ``(sum p_i (x_i - mu), sum p_i^2 (x_i - mu))`` for ``p = softmax(x/tau)``.

    ``mu = sum p_i x_i``. The first is zero; the second is non-negative.
    """
    x = np.asarray(x, dtype=np.float64)
    p = softmax_temperature_rows(x, tau)
    delta = x - np.sum(p * x, axis=-1, keepdims=True)
    return np.sum(p * delta, axis=-1), np.sum(p * p * delta, axis=-1)


# ---------------------------------------------------------------- spectrum

def deflate(p):
    """``P - 1 mu^T`` with ``mu = P^T 1 / N``: removes the Perron pair."""
    p = np.asarray(p, dtype=np.float64)
    mu = p.mean(axis=0)
    return p - mu[None, :]


def deflation_centering_check(p):
    """Max absolute row sum and column sum of the deflated matrix."""
    pbar = deflate(check_attention_matrix(p))
    return float(np.max(np.abs(pbar.sum(axis=1)))), float(np.max(np.abs(pbar.sum(axis=0))))


def eigenpair_variance_residual(p):
    """Worst ``| v* Pbar^T Pbar v / v* v - |lambda|^2 |`` over eigenpairs of ``Pbar``.

    ``v* Pbar^T Pbar v / v* v`` is the variance of the centered matrix along
    ``v``; for an eigenvector it equals the squared eigenvalue modulus.
    """
    pbar = deflate(check_attention_matrix(p))
    lam, vecs = np.linalg.eig(pbar)
    cov = pbar.T @ pbar
    worst = 0.0
    for i in range(lam.size):
        v = vecs[:, i]
        var = abs(np.vdot(v, cov @ v)) / np.vdot(v, v).real
        worst = max(worst, abs(var - abs(lam[i]) ** 2))
    return worst


def _subspace_iteration(p, tol, max_iter, block=8, seed=0):
    n = p.shape[0]
    mu = p.mean(axis=0)

    def apply(x):
        # (P - 1 mu^T) x without forming the deflated matrix
        return p @ x - mu @ x

    block = max(1, min(block, n - 1))
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((n, block)))
    prev = np.inf
    residual = np.inf
    for _ in range(max_iter):
        z = apply(basis)
        ritz_vals, ritz_vecs = np.linalg.eig(basis.T @ z)
        top = int(np.argmax(np.abs(ritz_vals)))
        theta = ritz_vals[top]
        x = basis @ ritz_vecs[:, top]
        x /= np.linalg.norm(x)
        residual = float(np.linalg.norm(apply(x) - theta * x))
        modulus = abs(theta)
        if abs(modulus - prev) < tol and residual < math.sqrt(tol):
            return float(modulus), x
        prev = modulus
        basis, _ = np.linalg.qr(z)
    raise ConvergenceError(
        f"subspace iteration did not converge in {max_iter} iterations", residual=residual
    )


def spectral_gap(p, method="auto", tol=1e-10, max_iter=10_000):
    """``(|lambda_2|, 1 - |lambda_2|, v_2)`` of a row-stochastic matrix.

    ``|lambda_2|`` is the largest eigenvalue modulus of the deflated matrix
    ``P - 1 mu^T``, whose spectrum is ``{0, lambda_2, ..., lambda_N}``.
    ``method="auto"`` uses a dense eigensolver up to N = 2048 and block power
    (subspace) iteration above; eigenvalues may be complex, only the modulus
    matters.
    """
    p = check_attention_matrix(p)
    n = p.shape[0]
    if n < 2:
        raise ShapeError("spectral gap needs N >= 2")
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX_N else "power"
    if method == "dense":
        lam, vecs = np.linalg.eig(deflate(p))
        top = int(np.argmax(np.abs(lam)))
        mod, vec = float(abs(lam[top])), vecs[:, top].astype(complex)
    elif method == "power":
        mod, vec = _subspace_iteration(p, tol, max_iter)
    else:
        raise DomainError(f"unknown spectral method {method!r}")
    mod = min(max(mod, 0.0), 1.0)
    return mod, 1.0 - mod, vec


# ---------------------------------------------------------------- log-normal

def lognormal_predict(n, sigma_sm_sq, include_sum_variance=False):
    """Predicted log-domain ``(mu, sigma^2)`` of softmax entries.

    ``mu = -ln n - sigma_sm_sq / 2``. With ``include_sum_variance`` the
    variance adds the log-variance of the normalizing sum (moderate Fenton
    formula), which matters at small ``n``.
    """
    if n < 2:
        raise DomainError("lognormal_predict needs n >= 2")
    mu = -math.log(n) - 0.5 * sigma_sm_sq
    var = sigma_sm_sq
    if include_sum_variance:
        var += fenton_sum_variance(sigma_sm_sq, n, "moderate")
    return mu, var


def lognormal_fit(p):
    """Sample mean and variance of ``ln(p)`` and the KS distance to a normal.

    The KS statistic compares the standardized log entries with the standard
    normal CDF; it is NaN when the log entries have zero variance.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise DomainError("lognormal_fit needs strictly positive entries (zero indicates underflow)")
    logs = np.log(p).ravel()
    mu = float(logs.mean())
    var = float(logs.var())
    if var == 0.0 or logs.size < 2:
        return mu, 0.0, float("nan")
    z = (logs - mu) / math.sqrt(var)
    ks = float(sps.kstest(z, "norm").statistic)
    return mu, var, ks


def fenton_sum_variance(sigma_sq, n, regime="moderate", a=None, b=None):
    """Log-variance of a sum of ``n`` i.i.d. zero-mean log-normals.

    narrow    ``n * sigma_sq`` (first-order expansion of each exponential)
    moderate  ``ln((exp(sigma_sq) - 1) / n + 1)`` (Fenton-Wilkinson)
    broad     ``a * sigma_sq + b`` with constants from moment matching
    """
    if regime == "narrow":
        return n * sigma_sq
    if regime == "moderate":
        return math.log(math.expm1(sigma_sq) / n + 1.0)
    if regime == "broad":
        if a is None or b is None:
            raise DomainError("broad regime needs constants a and b")
        return a * sigma_sq + b
    raise DomainError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def fenton_sum_mean(sigma_sq, n):
    """Log-mean of the moderate-regime approximation, ``ln n + (s2 - s2_sum) / 2``."""
    return math.log(n) + 0.5 * (sigma_sq - fenton_sum_variance(sigma_sq, n, "moderate"))


# ---------------------------------------------------------------- report

@dataclass
class StatsReport:
    temperature_empirical: Optional[float]
    temperature_theoretical: Optional[float]
    entropy_bits: float
    lambda2_mod: float
    spectral_gap: float
    mu_log: Optional[float]
    sigma2_log: Optional[float]
    ks_stat: Optional[float]

    def to_dict(self):
        out = asdict(self)
        # JSON has no NaN/Inf: undefined statistics become null
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}


def stats_report(q, k, weights):
    """Full diagnostics for one attention matrix built from ``q`` and ``k``.

    Temperatures describe the inputs and are ``None`` when the scores have zero
    variance; log-normal fields are ``None`` when ``weights`` has zero entries.
    """
    q = as_seq_tensor(q, "q")
    k = as_seq_tensor(k, "k")
    weights = check_attention_matrix(weights)
    try:
        t_emp = empirical_temperature(q, k)
    except DegenerateError:
        t_emp = None
    try:
        t_theo = theoretical_temperature(float(np.std(q)), float(np.std(k)), cross_covariance(q, k))
    except DomainError:
        t_theo = None
    if weights.shape[0] >= 2:
        lam2, gap, _ = spectral_gap(weights)
    else:
        lam2, gap = 0.0, 1.0
    try:
        mu, var, ks = lognormal_fit(weights)
    except DomainError:
        mu = var = ks = None
    return StatsReport(
        temperature_empirical=t_emp,
        temperature_theoretical=t_theo,
        entropy_bits=matrix_entropy(weights),
        lambda2_mod=lam2,
        spectral_gap=gap,
        mu_log=mu,
        sigma2_log=var,
        ks_stat=ks,
    )
