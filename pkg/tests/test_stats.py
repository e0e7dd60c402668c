import math

import numpy as np
import pytest

from conftest import random_stochastic
from lln_attention import (
    ConvergenceError,
    DegenerateError,
    DomainError,
    LLNParams,
    ShapeError,
    block_diag_attention,
    softmax_attention,
)
from lln_attention.oracle import dense_second_eigenvalue
from lln_attention.stats import (
    centered_moment_identities,
    cross_covariance,
    deflate,
    deflation_centering_check,
    eigenpair_variance_residual,
    empirical_temperature,
    fenton_sum_mean,
    fenton_sum_variance,
    lln_temperature,
    lognormal_fit,
    lognormal_predict,
    matrix_entropy,
    row_variances,
    softmax_temperature_rows,
    spectral_gap,
    stats_report,
    theoretical_temperature,
)


def gaussians(seed, n, d):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


# ---------------------------------------------------------------- temperature

def test_temperature_independent_inputs():
    q, k = gaussians(1, 128, 256)
    assert 0.93 <= empirical_temperature(q, k) <= 1.07


def test_temperature_depends_on_product_of_scales():
    q, k = gaussians(2, 128, 256)
    assert 0.93 <= empirical_temperature(2.0 * q, 0.5 * k) <= 1.07


def _self_attention_temperatures():
    return [empirical_temperature(q, q) for q, _ in (gaussians([3, i], 128, 256) for i in range(20))]


def test_temperature_with_keys_equal_to_queries():
    # The N diagonal scores |q_i|^2 / sqrt(d) have mean sqrt(d) and dominate
    # the spread: E[a^2] = (N - 1 + d + 2) / N, mean sqrt(d) / N.
    n, d = 128, 256
    expected = 1.0 / math.sqrt((n - 1 + d + 2) / n - (math.sqrt(d) / n) ** 2)
    temps = _self_attention_temperatures()
    assert abs(np.mean(temps) - expected) <= 0.01
    assert max(abs(t - expected) for t in temps) <= 0.03


@pytest.mark.xfail(strict=True, reason="stated interval assumes tau = 1/sqrt(2); "
                   "population std over all N^2 scores gives ~0.578 (see test above)")
def test_temperature_with_keys_equal_to_queries_stated_interval():
    assert all(0.65 <= t <= 0.77 for t in _self_attention_temperatures())


def test_temperature_zero_variance():
    with pytest.raises(DegenerateError):
        empirical_temperature(np.ones((4, 3)), np.ones((4, 3)))
    with pytest.raises(DegenerateError):
        empirical_temperature([[1.0]], [[2.0]])


@pytest.mark.parametrize("args, expected", [
    ((1.0, 1.0, 0.0), 1.0),
    ((1.0, 1.0, 1.0), 0.7071067811865476),
    ((2.0, 0.5, 0.0), 1.0),
])
def test_theoretical_temperature(args, expected):
    assert theoretical_temperature(*args) == pytest.approx(expected, rel=1e-15)


def test_theoretical_temperature_bad_radicand():
    with pytest.raises(DomainError):
        theoretical_temperature(1.0, 1.0, -1.0)


def test_cross_covariance_vanishes_for_independent_inputs():
    for n in (10_000, 1_000_000):
        q, k = gaussians(4, n, 1)
        # sampling sd of Cov(q^2, k^2) is about 2 / sqrt(n)
        assert abs(cross_covariance(q, k)) <= 10.0 / math.sqrt(n)


def test_cross_covariance_identical_inputs():
    q, _ = gaussians(5, 2000, 64)
    # Var(q^2) - Var(q)^2 = 2 - 1 for unit Gaussians
    assert cross_covariance(q, q) == pytest.approx(1.0, abs=0.05)
    assert theoretical_temperature(1.0, 1.0, cross_covariance(q, q)) == pytest.approx(
        1 / math.sqrt(2), abs=0.01)


@pytest.mark.parametrize("alpha_sq, a, b", [(0.225, 2.0, 0.1), (0.5, 1.0, 0.0)])
def test_lln_temperature(alpha_sq, a, b):
    params = LLNParams(math.sqrt(alpha_sq), math.sqrt(alpha_sq), a=a, b=b, sigma_q=1.0, sigma_k=1.0)
    assert lln_temperature(params) == pytest.approx(1.0, rel=1e-12)


def test_lln_temperature_needs_calibration():
    with pytest.raises(DomainError):
        lln_temperature(LLNParams(1.0, 1.0))
    with pytest.raises(DomainError):
        lln_temperature(LLNParams(1.0, 1.0, a=1.0, b=-5.0, sigma_q=1.0, sigma_k=1.0))


# ---------------------------------------------------------------- entropy and variance

def test_entropy_examples():
    assert matrix_entropy(np.full((4, 4), 0.25)) == 2.0
    assert matrix_entropy(np.eye(8)) == 0.0
    assert matrix_entropy(np.tile([0.5, 0.5, 0.0, 0.0], (4, 1))) == pytest.approx(1.0, abs=1e-15)


def test_entropy_rejects_non_stochastic():
    with pytest.raises(DomainError):
        matrix_entropy(np.full((2, 2), 0.4))


def test_row_variances():
    np.testing.assert_array_equal(row_variances(np.full((3, 3), 1 / 3)), 0.0)
    np.testing.assert_allclose(row_variances(np.eye(2)), [0.25, 0.25])


def test_temperature_monotonicity_small_grid():
    x = np.random.default_rng(6).standard_normal((10, 10))
    taus = (0.25, 0.5, 1.0, 2.0, 4.0)
    ents = [matrix_entropy(softmax_temperature_rows(x, t)) for t in taus]
    assert all(np.diff(ents) > 0)   # strict for non-constant rows
    variances = np.stack([row_variances(softmax_temperature_rows(x, t)) for t in taus])
    assert np.all(np.diff(variances, axis=0) <= 1e-12)


def test_centered_moment_identities():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1000, 12)) * 3
    first, second = centered_moment_identities(x, rng.uniform(0.1, 5.0, (1000, 1)))
    assert np.max(np.abs(first)) <= 1e-10
    assert second.min() >= -1e-12


# ---------------------------------------------------------------- spectrum

def test_spectral_gap_uniform_and_identity():
    lam2, gap, _ = spectral_gap(np.full((6, 6), 1 / 6))
    assert lam2 == pytest.approx(0.0, abs=1e-15) and gap == pytest.approx(1.0, abs=1e-15)
    lam2, gap, _ = spectral_gap(np.eye(6))
    assert lam2 == 1.0 and gap == 0.0


def test_spectral_gap_matches_full_matrix_eigenvalues():
    p = random_stochastic(np.random.default_rng(8), 16)
    lam2, gap, vec = spectral_gap(p)
    assert abs(lam2 - dense_second_eigenvalue(p)) <= 1e-8
    assert gap == 1.0 - lam2
    pbar = deflate(p)
    lam = (vec.conj() @ pbar @ vec) / (vec.conj() @ vec)
    assert np.linalg.norm(pbar @ vec - lam * vec) <= 1e-10


def test_power_iteration_matches_dense():
    rng = np.random.default_rng(9)
    for scale in (0.2, 1.0, 5.0):
        p = softmax_temperature_rows(rng.standard_normal((40, 40)), scale)
        assert abs(spectral_gap(p, method="power")[0] - spectral_gap(p, method="dense")[0]) <= 1e-8


def test_power_iteration_on_complex_pair():
    # a rotation-like block gives lambda_2 as a complex-conjugate pair
    p = 0.5 * np.roll(np.eye(5), 1, axis=1) + 0.5 / 5
    dense = dense_second_eigenvalue(p)
    assert abs(spectral_gap(p, method="power")[0] - dense) <= 1e-8


def test_auto_uses_power_above_dense_limit(monkeypatch):
    import lln_attention.stats as stats
    p = softmax_temperature_rows(np.random.default_rng(10).standard_normal((30, 30)), 0.5)
    monkeypatch.setattr(stats, "DENSE_EIG_MAX_N", 10)
    assert abs(spectral_gap(p)[0] - dense_second_eigenvalue(p)) <= 1e-8


def test_power_iteration_non_convergence():
    p = softmax_temperature_rows(np.random.default_rng(11).standard_normal((30, 30)), 0.5)
    with pytest.raises(ConvergenceError) as err:
        spectral_gap(p, method="power", max_iter=1)
    assert err.value.residual > 0


def test_spectral_gap_errors():
    with pytest.raises(ShapeError):
        spectral_gap([[1.0]])
    with pytest.raises(DomainError):
        spectral_gap(np.eye(3), method="lanczos")


def test_deflation_centering_examples():
    assert max(deflation_centering_check(np.full((4, 4), 0.25))) <= 1e-15
    assert max(deflation_centering_check(np.eye(4))) <= 1e-15
    rng = np.random.default_rng(12)
    for _ in range(100):
        assert max(deflation_centering_check(random_stochastic(rng, int(rng.integers(2, 40))))) <= 1e-10


def test_eigenpair_variance_identity():
    rng = np.random.default_rng(13)
    for _ in range(10):
        assert eigenpair_variance_residual(random_stochastic(rng, int(rng.integers(2, 33)))) <= 1e-8


# ---------------------------------------------------------------- log-normal

def test_lognormal_predict_examples():
    mu, var = lognormal_predict(1024, 1.0)
    assert mu == pytest.approx(-math.log(1024) - 0.5, rel=1e-15)
    assert mu == pytest.approx(-7.4314718, abs=1e-7)
    assert var == 1.0
    assert lognormal_predict(math.e, 0.0)[0] == pytest.approx(-1.0, rel=1e-15)
    assert lognormal_predict(64, 2.0)[0] == pytest.approx(-5.158883, abs=1e-6)


def test_lognormal_predict_with_sum_variance():
    _, var = lognormal_predict(64, 1.0, include_sum_variance=True)
    assert var == pytest.approx(1.0 + fenton_sum_variance(1.0, 64), rel=1e-15)
    with pytest.raises(DomainError):
        lognormal_predict(1, 1.0)


def test_lognormal_fit_uniform():
    mu, var, ks = lognormal_fit(np.full((8, 8), 1 / 8))
    assert mu == pytest.approx(-math.log(8), rel=1e-15)
    assert var == 0.0
    assert math.isnan(ks)


def test_lognormal_fit_zero_entry():
    with pytest.raises(DomainError):
        lognormal_fit(np.eye(3))


def test_lognormal_fit_softmax_entries():
    q, k = gaussians(14, 512, 64)
    mu, var, ks = lognormal_fit(softmax_attention(q, k, np.zeros((512, 1)))[1])
    s2 = float(np.var(q @ k.T / 8.0))
    assert abs(var - s2) / s2 <= 0.15
    assert abs(mu - lognormal_predict(512, s2)[0]) <= 0.15
    assert ks <= 0.05


def test_fenton_examples():
    moderate = fenton_sum_variance(1.0, 64, "moderate")
    assert moderate == pytest.approx(math.log((math.e - 1) / 64 + 1), rel=1e-15)
    assert moderate == pytest.approx(0.026494, abs=1e-6)
    assert fenton_sum_variance(0.01, 16, "narrow") == pytest.approx(0.16, rel=1e-15)


def test_fenton_broad_and_errors():
    assert fenton_sum_variance(3.0, 10, "broad", a=2.0, b=0.1) == pytest.approx(6.1)
    with pytest.raises(DomainError):
        fenton_sum_variance(3.0, 10, "broad")
    with pytest.raises(DomainError):
        fenton_sum_variance(3.0, 10, "wide")


def test_fenton_sum_mean_matches_first_moment():
    # E[sum] = n exp(s2 / 2) must equal exp(mu + var / 2) of the fitted log-normal
    s2, n = 0.7, 32
    mu = fenton_sum_mean(s2, n)
    var = fenton_sum_variance(s2, n)
    assert math.exp(mu + var / 2) == pytest.approx(n * math.exp(s2 / 2), rel=1e-12)


# ---------------------------------------------------------------- report

def test_report_softmax():
    q, k = gaussians(15, 64, 16)
    w = softmax_attention(q, k, np.zeros((64, 1)))[1]
    r = stats_report(q, k, w)
    assert r.spectral_gap == pytest.approx(1.0 - r.lambda2_mod, abs=1e-12)
    assert 0 <= r.entropy_bits <= 6
    assert r.temperature_empirical == empirical_temperature(q, k)
    assert r.mu_log is not None and r.ks_stat is not None


def test_report_block_diag_has_no_lognormal_fields():
    q, k = gaussians(16, 12, 4)
    w = block_diag_attention(q, k, np.zeros((12, 1)), 4)[1]
    d = stats_report(q, k, w).to_dict()
    assert d["mu_log"] is None and d["sigma2_log"] is None and d["ks_stat"] is None
    assert d["entropy_bits"] <= 2.0


def test_report_uniform_nulls():
    q = np.ones((4, 3))
    w = np.full((4, 4), 0.25)
    d = stats_report(q, q, w).to_dict()
    assert d["temperature_empirical"] is None
    assert d["entropy_bits"] == 2.0 and d["spectral_gap"] == 1.0
    assert d["ks_stat"] is None and d["sigma2_log"] == 0.0
