"""Moment matching of LLN attention to softmax attention.

Both attentions are fed uncorrelated Gaussian queries and keys and the
variance of the log of their attention entries is measured. Softmax supplies
the targets: one log-variance per grid value ``s = sigma_q^2 sigma_k^2``.
LLN supplies a monotone curve of log-variance against its spread
``sigma_tilde^2 = alpha^2 sigma_q^2 + beta^2 sigma_k^2``; linear interpolation on
that curve gives, for every target, the spread that reproduces it. A
least-squares line ``sigma_sm^2 ~ a * sigma_tilde^2 + b`` through the matched
pairs yields the broad-regime constants, and::

    sigma_tilde = sqrt((sigma_q^2 sigma_k^2 - b) / a)
    alpha = sigma_tilde / (sqrt(2) sigma_q),   beta = sigma_tilde / (sqrt(2) sigma_k)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .attention import LLNParams, lln_attention_materialized, softmax_attention
from .errors import CalibrationInfeasibleError, DegenerateError, DomainError

DEFAULT_GRID = tuple(float(x) for x in np.linspace(1.0, 4.0, 8))

# largest LLN spread tried while inverting the variance curve
_MAX_LLN_SPREAD = 256.0


@dataclass(frozen=True)
class MatchConfig:
    sigma_tilde_sq_grid: Tuple[float, ...] = DEFAULT_GRID
    n_tokens: int = 256
    dim: int = 64
    n_seeds: int = 16
    seed: int = 0
    lln_step: float = 0.5   # spacing of the LLN variance curve used for interpolation

    def __post_init__(self):
        grid = tuple(float(x) for x in self.sigma_tilde_sq_grid)
        object.__setattr__(self, "sigma_tilde_sq_grid", grid)
        if len(grid) < 2:
            raise DomainError("moment matching needs at least 2 grid points")
        if any(not (0.0 < g <= 16.0) for g in grid):
            raise DomainError("grid values must lie in (0, 16]")
        if self.n_tokens < 2 or self.dim < 1 or self.n_seeds < 1:
            raise DomainError("need n_tokens >= 2, dim >= 1, n_seeds >= 1")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")
        if not self.lln_step > 0:
            raise DomainError("lln_step must be positive")


@dataclass
class MatchResult:
    a: float
    b: float
    params: LLNParams
    residual: float
    # (s2, measured softmax log-var, LLN log-var after matching at s2)
    grid_table: List[Tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self):
        p = self.params
        return {
            "a": self.a,
            "b": self.b,
            "alpha": p.alpha,
            "beta": p.beta,
            "sigma_q": p.sigma_q,
            "sigma_k": p.sigma_k,
            "sigma_tilde": p.sigma_tilde,
            "residual": self.residual,
            "grid": [{"s2": s, "sm": sm, "lln": lln} for s, sm, lln in self.grid_table],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _draws(cfg, index):
    rng = np.random.default_rng([cfg.seed, index])
    zq = rng.standard_normal((cfg.n_tokens, cfg.dim))
    zk = rng.standard_normal((cfg.n_tokens, cfg.dim))
    return zq, zk


def _log_variance(weights):
    if weights.min() <= 0.0:
        raise DomainError("attention entries underflowed to zero; log-variance undefined")
    return float(np.log(weights).var())


def measure_sigma_sm_sq(sigma_tilde_sq, cfg):
    """Mean log-variance of softmax entries for inputs with ``sigma_q^2 sigma_k^2 = s``.

    ``sigma_q = sigma_k = s ** 0.25``; one ``(q, k)`` draw per seed.
    """
    sigma = sigma_tilde_sq ** 0.25
    v = np.zeros((cfg.n_tokens, 1))
    total = 0.0
    for i in range(cfg.n_seeds):
        zq, zk = _draws(cfg, i)
        total += _log_variance(softmax_attention(sigma * zq, sigma * zk, v)[1])
    return total / cfg.n_seeds


def measure_lln_log_variance(alpha, beta, sigma_q, sigma_k, cfg):
    """Mean log-variance of LLN entries for given gains and input scales."""
    v = np.zeros((cfg.n_tokens, 1))
    params = LLNParams(alpha, beta)
    total = 0.0
    for i in range(cfg.n_seeds):
        zq, zk = _draws(cfg, i)
        total += _log_variance(lln_attention_materialized(sigma_q * zq, sigma_k * zk, v, params)[1])
    return total / cfg.n_seeds


def measure_sigma_lln_sq(sigma_tilde_sq, cfg):
    """Mean LLN log-variance at spread ``s`` with the symmetric split
    ``alpha^2 sigma_q^2 = beta^2 sigma_k^2 = s / 2``."""
    sigma = sigma_tilde_sq ** 0.25
    gain = math.sqrt(sigma_tilde_sq / 2.0) / sigma
    return measure_lln_log_variance(gain, gain, sigma, sigma, cfg)


def _invert_lln_curve(targets, cfg, measure_lln):
    # Walk the LLN curve on a uniform grid until it passes the largest target,
    # then invert by linear interpolation.
    spreads, values = [], []
    top = max(targets)
    t = cfg.lln_step
    while True:
        spreads.append(t)
        values.append(measure_lln(t, cfg))
        if values[-1] >= top:
            break
        t += cfg.lln_step
        if t > _MAX_LLN_SPREAD:
            raise CalibrationInfeasibleError(
                f"LLN log-variance stays below {top:.4g} up to sigma_tilde^2 = {_MAX_LLN_SPREAD}"
            )
    spreads, values = np.array(spreads), np.array(values)
    if np.any(np.diff(values) <= 0):
        raise DegenerateError("LLN log-variance curve is not increasing; cannot invert")
    low = min(targets)
    if low < values[0]:
        raise CalibrationInfeasibleError(
            f"target log-variance {low:.4g} is below the LLN curve start {values[0]:.4g}"
        )
    return np.interp(targets, values, spreads)


def solve_alpha_beta(a, b, sigma_q, sigma_k):
    """Feature-map gains that put LLN's log-variance on the softmax one.

    Raises :class:`CalibrationInfeasibleError` when ``sigma_q^2 sigma_k^2 <= b``
    (inputs too narrow for the broad regime) or ``a <= 0``.
    """
    if not (sigma_q > 0 and sigma_k > 0):
        raise DomainError("sigma_q and sigma_k must be positive")
    if not a > 0:
        raise CalibrationInfeasibleError(f"slope a = {a} must be positive")
    prod = sigma_q ** 2 * sigma_k ** 2
    if prod <= b:
        raise CalibrationInfeasibleError(
            f"sigma_q^2 sigma_k^2 = {prod:.6g} <= b = {b:.6g}: inputs too narrow for the broad regime"
        )
    sigma_tilde = math.sqrt((prod - b) / a)
    return LLNParams(
        alpha=sigma_tilde / (math.sqrt(2.0) * sigma_q),
        beta=sigma_tilde / (math.sqrt(2.0) * sigma_k),
        a=a,
        b=b,
        sigma_q=sigma_q,
        sigma_k=sigma_k,
        sigma_tilde=sigma_tilde,
    )


def fit_line(x, y):
    """Least-squares ``y ~ a x + b``; exact interpolation for two points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0.0:
        raise DegenerateError("all abscissae are equal; line fit is singular")
    design = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(a), float(b)


def fit_broad_constants(
    cfg: MatchConfig,
    sigma_q: float = 1.0,
    sigma_k: float = 1.0,
    measure_sm: Callable = measure_sigma_sm_sq,
    measure_lln: Callable = measure_sigma_lln_sq,
) -> MatchResult:
    """Fit ``a, b`` over ``cfg``'s grid and solve for the gains at ``(sigma_q, sigma_k)``.

    ``measure_sm`` and ``measure_lln`` can be swapped for synthetic
    measurements ``f(s, cfg) -> float``.
    """
    grid = np.array(cfg.sigma_tilde_sq_grid)
    if np.ptp(grid) == 0.0:
        raise DegenerateError("all grid points are equal; line fit is singular")
    targets = np.array([measure_sm(s, cfg) for s in grid])
    matched = _invert_lln_curve(targets, cfg, measure_lln)
    a, b = fit_line(matched, targets)
    if not a > 0:
        raise DegenerateError(f"fitted slope a = {a} is not positive")
    residual = float(np.max(np.abs(targets - (a * matched + b)) / np.abs(targets)))
    params = solve_alpha_beta(a, b, sigma_q, sigma_k)

    table = []
    for s, sm in zip(grid, targets):
        spread = (s - b) / a
        lln = measure_lln(spread, cfg) if spread > 0 else float("nan")
        table.append((float(s), float(sm), float(lln)))
    return MatchResult(a=a, b=b, params=params, residual=residual, grid_table=table)


def variance_alignment(result: MatchResult, cfg: MatchConfig):
    """Relative log-variance gap to softmax before and after matching.

    For every grid value ``s`` (inputs with ``sigma_q = sigma_k = s ** 0.25``)
    returns ``(s, sm, lln_matched, lln_unmatched)`` where the matched LLN uses
    gains solved from ``result``'s constants and the unmatched one uses
    ``alpha = beta = 1``.
    """
    rows = []
    for s in cfg.sigma_tilde_sq_grid:
        sigma = s ** 0.25
        sm = measure_sigma_sm_sq(s, cfg)
        p = solve_alpha_beta(result.a, result.b, sigma, sigma)
        matched = measure_lln_log_variance(p.alpha, p.beta, sigma, sigma, cfg)
        unmatched = measure_lln_log_variance(1.0, 1.0, sigma, sigma, cfg)
        rows.append((s, sm, matched, unmatched))
    return rows
