"""Offline fitting of correlation parameters.

The prior mean and kernel variance have analytic estimators; the
per-attribute correlation lengths are fitted by maximizing the Gaussian
log-likelihood of the past answers

    LL = -1/2 c' Sigma_inv c - 1/2 log|Sigma| - n/2 log(2 pi)

over log-space lengths (c is the mean-centered answer vector and Sigma
carries the beta^2 diagonal). The surface is non-convex, so a direct-
search ascent runs from the domain-width starting point plus a few
log-uniform restarts and keeps the best candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateSynopsisError, LearnError
from .inference import prior_mean, sigma_hat
from .kernel import CorrelationParams, build_sigma, prior_mean_vector, \
    region_volume
from .relation import AttributeCatalog

_LOG_2PI = math.log(2.0 * math.pi)

# objective value standing in for -inf when Sigma degenerates mid-search
_FAIL_VALUE = -1e30


@dataclass(frozen=True)
class FitConfig:
    n_min: int = 10        # entries required before any fit is attempted
    restarts: int = 3      # extra log-uniform starting points
    seed: int = 0
    max_iter: int = 500
    rel_tol: float = 1e-6


@dataclass(frozen=True)
class OptimizerResult:
    x: np.ndarray
    value: float
    converged: bool


def log_likelihood(params: CorrelationParams, entries: Sequence,
                   catalog: AttributeCatalog) -> float:
    """Gaussian log-likelihood of the observed answers under params."""
    if not entries:
        raise LearnError("log-likelihood needs at least one entry")
    sigma, sigma_inv, _ = build_sigma(entries, params, catalog)
    snippets = [e.snippet for e in entries]
    centered = np.array([e.theta for e in entries]) - prior_mean_vector(
        snippets, params, catalog)
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise DegenerateSynopsisError("covariance determinant not positive")
    n = len(entries)
    quad = float(centered @ sigma_inv @ centered)
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * _LOG_2PI


def optimizer(objective: Callable[[np.ndarray], float], start: np.ndarray,
              config: FitConfig = FitConfig()) -> OptimizerResult:
    """Derivative-free local maximization of the objective."""
    start = np.asarray(start, dtype=np.float64)
    f0 = objective(start)
    if math.isnan(f0):
        raise LearnError("objective is NaN at the starting point")

    best = {"x": start.copy(), "value": f0}

    def negated(x):
        v = objective(x)
        if math.isnan(v):
            return -_FAIL_VALUE
        if v > best["value"]:
            best["x"] = np.array(x, copy=True)
            best["value"] = v
        return -v

    result = minimize(
        negated, start, method="Nelder-Mead",
        options={
            "maxiter": config.max_iter,
            "xatol": config.rel_tol * max(1.0, float(np.abs(start).max())),
            "fatol": config.rel_tol * max(1.0, abs(f0)),
        },
    )
    return OptimizerResult(best["x"], best["value"], bool(result.success))


def fit(entries: Sequence, catalog: AttributeCatalog,
        config: FitConfig = FitConfig()) -> CorrelationParams | None:
    """Fit correlation parameters for one aggregate key's entries.

    Returns None (the untrained sentinel) when fewer than n_min entries
    exist; callers then bypass inference and return raw answers.
    """
    if len(entries) < config.n_min:
        return None
    g = entries[0].snippet.g
    if any(e.snippet.g != g for e in entries):
        raise LearnError("entries span multiple aggregate keys")

    volumes = [region_volume(e.snippet, catalog) for e in entries]
    mu = prior_mean(entries, g, catalog)
    sigma2 = sigma_hat(entries, g, volumes)

    widths = {attr: max(hi - lo, 1e-6)
              for attr, (lo, hi) in catalog.numeric.items()}
    attrs = sorted(widths)
    start_lengths = np.array([widths[a] for a in attrs])
    if sigma2 == 0.0:
        # zero signal: any lengths give the same (flat) model
        return CorrelationParams.build(g, dict(zip(attrs, start_lengths)),
                                       0.0, mu)

    def params_at(x: np.ndarray) -> CorrelationParams:
        return CorrelationParams.build(
            g, dict(zip(attrs, np.exp(x))), sigma2, mu)

    def objective(x: np.ndarray) -> float:
        try:
            return log_likelihood(params_at(x), entries, catalog)
        except DegenerateSynopsisError:
            return _FAIL_VALUE

    rng = np.random.default_rng(config.seed)
    starts = [np.log(start_lengths)]
    for _ in range(config.restarts):
        factors = rng.uniform(math.log(0.05), math.log(2.0),
                              size=len(attrs))
        starts.append(np.log(start_lengths) + factors)

    best: OptimizerResult | None = None
    for s in starts:
        candidate = optimizer(objective, s, config)
        if best is None or candidate.value > best.value:
            best = candidate
    if best.value <= _FAIL_VALUE:
        raise DegenerateSynopsisError(
            "likelihood degenerate at every starting point")
    return params_at(best.x)
