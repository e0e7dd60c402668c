"""Property suites run by ``lln-attention verify``.

Every check returns a :class:`CheckResult` with the worst residual seen, so a
report line says both whether a property held and by how much.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .attention import (
    LLNParams,
    block_diag_attention,
    lln_attention_grad,
    lln_attention_linear,
    lln_attention_materialized,
    lln_diag_attention,
    lln_diag_attention_grad,
    softmax_attention,
    softmax_attention_grad,
)
from .errors import AttentionError
from .oracle import (
    KernelSpec,
    brute_force_attention,
    dense_second_eigenvalue,
    finite_diff_grad,
    mc_lognormal_sum_var,
)
from .stats import (
    centered_moment_identities,
    deflation_centering_check,
    eigenpair_variance_residual,
    fenton_sum_variance,
    matrix_entropy,
    row_variances,
    softmax_temperature_rows,
    spectral_gap,
)

SUITES = ("stats", "grads", "oracles")
TEMPERATURE_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)

GRAD_STEP = 1e-5
GRAD_RTOL = 1e-4
GRAD_FLOOR = 1e-6   # entries smaller than this are skipped in the relative check


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<36s} worst={self.worst:.3e}"
        return f"{text}  {self.detail}" if self.detail else text


def _rng(seed, *index):
    return np.random.default_rng([seed, *index])


def _random_stochastic(rng, n):
    p = rng.random((n, n)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)


def _check(name, residuals, tol, detail=""):
    worst = max(residuals) if residuals else 0.0
    return CheckResult(name, bool(worst <= tol), float(worst), detail)


# ---------------------------------------------------------------- stats

def _uniform_fixtures():
    out = []
    for n in (2, 4, 16, 64):
        ent = matrix_entropy(np.full((n, n), 1.0 / n))
        lam2, gap, _ = spectral_gap(np.full((n, n), 1.0 / n))
        row, col = deflation_centering_check(np.full((n, n), 1.0 / n))
        out += [abs(ent - math.log2(n)), abs(lam2), abs(gap - 1.0), row, col]
    return _check("uniform_fixture", out, 1e-12)


def _identity_fixtures():
    out = []
    for n in (2, 4, 16):
        eye = np.eye(n)
        lam2, gap, _ = spectral_gap(eye)
        row, col = deflation_centering_check(eye)
        out += [matrix_entropy(eye), abs(lam2 - 1.0), abs(gap), row, col]
    return _check("identity_fixture", out, 1e-12)


def _monotonicity(seed, n_seeds=100, n=16):
    ent_viol, var_viol = [], []
    for i in range(n_seeds):
        x = _rng(seed, 10, i).standard_normal((n, n))
        ents, variances = [], []
        for tau in TEMPERATURE_GRID:
            p = softmax_temperature_rows(x, tau)
            ents.append(matrix_entropy(p))
            variances.append(row_variances(p))
        # positive values are violations
        ent_viol.append(max(0.0, float(np.max(-np.diff(ents)))))
        var_viol.append(max(0.0, float(np.max(np.diff(np.stack(variances), axis=0)))))
    return [
        _check("entropy_monotone_in_temperature", ent_viol, 1e-12),
        _check("row_variance_monotone_in_temperature", var_viol, 1e-12),
    ]


def _eigenpair_identity(seed, n_seeds=50):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 20, i)
        res.append(eigenpair_variance_residual(_random_stochastic(rng, int(rng.integers(2, 33)))))
    return _check("eigenpair_variance_identity", res, 1e-8)


def _centering(seed, n_seeds=100):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 30, i)
        res.extend(deflation_centering_check(_random_stochastic(rng, int(rng.integers(2, 65)))))
    return _check("deflation_centering", res, 1e-10)


def _lemmas(seed, n_rows=1000):
    rng = _rng(seed, 40)
    x = rng.standard_normal((n_rows, 16)) * rng.uniform(0.1, 5.0, (n_rows, 1))
    taus = rng.uniform(0.1, 4.0, (n_rows, 1))
    first, second = centered_moment_identities(x, taus)
    return [
        _check("weighted_deviation_zero", list(np.abs(first)), 1e-10),
        _check("squared_weight_deviation_nonneg", [max(0.0, -float(second.min()))], 1e-12),
    ]


def _bounds(seed, n_seeds=50):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 50, i)
        n = int(rng.integers(2, 33))
        x = rng.standard_normal((n, n)) * rng.uniform(0.1, 10.0)
        p = softmax_temperature_rows(x, 1.0)
        h = matrix_entropy(p)
        _, gap, _ = spectral_gap(p)
        res += [max(0.0, -h), max(0.0, h - math.log2(n)), max(0.0, -gap), max(0.0, gap - 1.0)]
    return _check("entropy_and_gap_bounds", res, 1e-12)


def stats_suite(seed):
    return [
        _uniform_fixtures(),
        _identity_fixtures(),
        *_monotonicity(seed),
        _eigenpair_identity(seed),
        _centering(seed),
        *_lemmas(seed),
        _bounds(seed),
    ]


# ---------------------------------------------------------------- grads

def grad_relative_error(analytic, numeric, floor=GRAD_FLOOR):
    """Worst ``|analytic - numeric| / |numeric|`` over entries with ``|numeric| > floor``."""
    mask = np.abs(numeric) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / np.abs(numeric[mask])))


def gradient_check(forward, grad, q, k, v, upstream, h=GRAD_STEP):
    """Worst relative error of ``grad`` against central differences of ``<upstream, forward>``."""
    analytic = grad(q, k, v, upstream)
    inputs = (q, k, v)
    worst = 0.0
    for slot, a in enumerate(analytic):
        def loss(x, slot=slot):
            args = list(inputs)
            args[slot] = x
            return float(np.sum(upstream * forward(*args)))

        worst = max(worst, grad_relative_error(a, finite_diff_grad(loss, inputs[slot], h)))
    return worst


def _grad_instances(seed, tag, n_seeds, n=5, d=3):
    for i in range(n_seeds):
        rng = _rng(seed, tag, i)
        q, k, v, u = (rng.standard_normal((n, d)) for _ in range(4))
        gains = rng.uniform(0.2, 1.5, 2)
        yield q, k, v, u, LLNParams(float(gains[0]), float(gains[1]))


def grads_suite(seed, n_seeds=50):
    lln, sm, hybrid = [], [], []
    for q, k, v, u, params in _grad_instances(seed, 60, n_seeds):
        lln.append(gradient_check(
            lambda q, k, v: lln_attention_linear(q, k, v, params),
            lambda q, k, v, u: lln_attention_grad(q, k, v, params, u),
            q, k, v, u))
        sm.append(gradient_check(
            lambda q, k, v: softmax_attention(q, k, v)[0],
            softmax_attention_grad, q, k, v, u))
        hybrid.append(gradient_check(
            lambda q, k, v: lln_diag_attention(q, k, v, params, 2),
            lambda q, k, v, u: lln_diag_attention_grad(q, k, v, params, 2, u),
            q, k, v, u))
    return [
        _check("lln_grad_vs_finite_diff", lln, GRAD_RTOL),
        _check("softmax_grad_vs_finite_diff", sm, GRAD_RTOL),
        _check("hybrid_grad_vs_finite_diff", hybrid, GRAD_RTOL),
    ]


# ---------------------------------------------------------------- oracles

def oracle_instance(seed, i, max_n=64, max_d=16):
    rng = _rng(seed, 70, i)
    n = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
    gains = rng.uniform(0.1, 1.0, 2)
    return q, k, v, LLNParams(float(gains[0]), float(gains[1]))


def brute_force_residuals(seed, n_seeds=50):
    """Max-abs differences of softmax and LLN against the brute-force kernel oracle."""
    sm, lln = [], []
    for i in range(n_seeds):
        q, k, v, params = oracle_instance(seed, i)
        ref, ref_w = brute_force_attention(q, k, v, KernelSpec("exp_scaled"))
        out, w = softmax_attention(q, k, v)
        sm.append(max(float(np.max(np.abs(out - ref))), float(np.max(np.abs(w - ref_w)))))
        spec = KernelSpec("elementwise_exp_product", params.alpha, params.beta)
        ref, ref_w = brute_force_attention(q, k, v, spec)
        out, w = lln_attention_materialized(q, k, v, params)
        lln.append(max(float(np.max(np.abs(out - ref))), float(np.max(np.abs(w - ref_w)))))
    return sm, lln


def linearization_residuals(seed, n_seeds=50, max_n=256):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 80, i)
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, 17))
        q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
        params = LLNParams(*(float(g) for g in rng.uniform(0.1, 2.0, 2)))
        fast = lln_attention_linear(q, k, v, params)
        slow = lln_attention_materialized(q, k, v, params)[0]
        res.append(float(np.max(np.abs(fast - slow))))
    return res


def _fenton_spot_check(seed):
    # one moderate-regime point; the full grid lives in the test suite
    mc = mc_lognormal_sum_var(1.0, 64, 100_000, seed)
    formula = fenton_sum_variance(1.0, 64, "moderate")
    return _check("fenton_moderate_vs_monte_carlo", [abs(mc - formula) / formula], 0.10)


def _power_vs_dense(seed, n_seeds=10):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 90, i)
        p = softmax_temperature_rows(rng.standard_normal((48, 48)), 0.3)
        res.append(abs(spectral_gap(p, method="power")[0] - dense_second_eigenvalue(p)))
    return _check("power_iteration_vs_dense", res, 1e-8)


def _block_diag_vs_slices(seed, n_seeds=20):
    res = []
    for i in range(n_seeds):
        rng = _rng(seed, 100, i)
        q, k, v = (rng.standard_normal((13, 4)) for _ in range(3))
        out, _ = block_diag_attention(q, k, v, 5)
        ref = np.vstack([softmax_attention(q[s:s + 5], k[s:s + 5], v[s:s + 5])[0]
                         for s in range(0, 13, 5)])
        res.append(float(np.max(np.abs(out - ref))))
    return _check("block_diag_vs_slices", res, 1e-12)


def oracles_suite(seed):
    sm, lln = brute_force_residuals(seed)
    return [
        _check("softmax_vs_brute_force", sm, 1e-10),
        _check("lln_vs_brute_force", lln, 1e-10),
        _check("linear_vs_materialized", linearization_residuals(seed), 1e-9),
        _block_diag_vs_slices(seed),
        _power_vs_dense(seed),
        _fenton_spot_check(seed),
    ]


# ---------------------------------------------------------------- driver

SUITE_RUNNERS: Dict[str, Callable[[int], List[CheckResult]]] = {
    "stats": stats_suite,
    "grads": grads_suite,
    "oracles": oracles_suite,
}


def check_matrix(p, atol=1e-9):
    """Row-stochastic check of a user-supplied matrix, plus entropy and gap bounds."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        return [CheckResult("row_stochastic", False, math.inf, f"shape {p.shape} is not square")]
    rows = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    outside = float(max(0.0, -p.min(), p.max() - 1.0))
    worst = max(rows, outside)
    result = CheckResult("row_stochastic", worst <= atol, worst,
                         "" if worst <= atol else "row-stochastic invariant violated")
    if not result.passed:
        return [result]
    h = matrix_entropy(p)
    out = [result, _check("entropy_bounds", [max(0.0, -h), max(0.0, h - math.log2(p.shape[0]))], 1e-12)]
    if p.shape[0] >= 2:
        out.append(_check("deflation_centering", list(deflation_centering_check(p)), 1e-9))
    return out


def run_suites(suite="all", seed=0):
    names = SUITES if suite == "all" else (suite,)
    results = []
    for name in names:
        try:
            results.extend(SUITE_RUNNERS[name](seed))
        except AttentionError as exc:
            results.append(CheckResult(f"{name}_suite", False, math.inf, f"aborted: {exc}"))
    return results
