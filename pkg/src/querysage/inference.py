"""Model-based answer improvement by Gaussian conditioning.

Past raw answers and the incoming query's answer are jointly Gaussian
under the maximum-entropy model fixed by the kernel's first two moments.
Conditioning the new query's exact answer on everything observed yields
a model answer whose error never exceeds the raw error:

    gamma^2    = kappa_bar^2 - k' Sigma_inv k        (model-only variance)
    theta_only = mu_new + k' Sigma_inv (theta - mu)  (model-only answer)
    theta_mb   = (beta^2 theta_only + gamma^2 theta_raw) / (beta^2 + gamma^2)
    beta_mb^2  = beta^2 gamma^2 / (beta^2 + gamma^2)

beta_mb^2 is a harmonic combination of beta^2 and gamma^2, so it is
bounded by each; the no-regression guarantee is structural, not a
tuning outcome. infer() does O(n^2) work given a precomputed inverse;
infer_direct() solves the full (n+1)-sized system and exists as the
slow reference path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .engine import RawAnswer
from .errors import ConfigError, LearnError
from .frontend import AggKey
from .kernel import (
    CorrelationParams,
    CovarianceSystem,
    build_sigma,
    prior_mean_vector,
    region_volume,
    snippet_covariance,
    _pure_cov,
)
from .relation import AttributeCatalog


@dataclass(frozen=True)
class ModelAnswer:
    theta_model: float  # improved answer
    beta_model: float   # improved expected error
    gamma2: float       # model-only variance before blending
    theta_only: float   # model-only answer before blending


def confidence_multiplier(delta: float) -> float:
    """alpha such that Pr(|Z| < alpha) = delta for standard normal Z."""
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"confidence level must be in (0, 1), got {delta}")
    return float(norm.ppf(0.5 * (1.0 + delta)))


def prior_mean(entries: Sequence, g: AggKey,
               catalog: AttributeCatalog) -> float:
    """Fitted prior mean for one aggregate key.

    AVG: the arithmetic mean of past answers. FREQ: a per-unit-volume
    density, so each snippet's prior mean is this value times its
    region volume.
    """
    if not entries:
        raise LearnError("prior mean needs at least one entry")
    thetas = np.array([e.theta for e in entries])
    if g.kind == "avg":
        return float(thetas.mean())
    vols = np.array([region_volume(e.snippet, catalog) for e in entries])
    return float((thetas / vols).mean())


def sigma_hat(entries: Sequence, g: AggKey,
              region_volumes: Sequence[float]) -> float:
    """Fitted kernel variance: the population variance of past answers
    (FREQ answers are first converted to densities)."""
    if len(entries) < 2:
        raise LearnError("variance estimate needs at least two entries")
    thetas = np.array([e.theta for e in entries])
    if g.kind == "freq":
        thetas = thetas / np.asarray(region_volumes, dtype=np.float64)
    return float(thetas.var())


def infer(raw: RawAnswer, system: CovarianceSystem,
          raw_beta: float | None = None) -> ModelAnswer:
    """Improved answer from the prebuilt system; O(n^2) per call."""
    beta = raw.beta if raw_beta is None else raw_beta
    w = system.sigma_n_inv @ system.k_n
    gamma2 = max(float(system.kappa_bar2 - system.k_n @ w), 0.0)
    mu_n = system.mu_vec[:-1]
    mu_new = float(system.mu_vec[-1])
    theta_only = mu_new + float(w @ (system.theta_n - mu_n))
    if beta == 0.0:
        return ModelAnswer(raw.theta, 0.0, gamma2, theta_only)
    if gamma2 == 0.0:
        return ModelAnswer(theta_only, 0.0, 0.0, theta_only)
    b2 = beta * beta
    denom = b2 + gamma2
    theta_model = (b2 * theta_only + gamma2 * raw.theta) / denom
    beta_model = math.sqrt(b2 * gamma2 / denom)
    return ModelAnswer(float(theta_model), float(beta_model), gamma2,
                       theta_only)


def infer_direct(raw: RawAnswer, entries: Sequence,
                 params: CorrelationParams, catalog: AttributeCatalog,
                 raw_beta: float | None = None) -> ModelAnswer:
    """Reference path: condition on the bordered (n+1)-sized system.

    The past block carries exactly the jitter build_sigma chose, so this
    agrees with infer() to floating-point roundoff.
    """
    beta = raw.beta if raw_beta is None else raw_beta
    snippets = [e.snippet for e in entries]
    sigma_n, sigma_n_inv, _ = build_sigma(entries, params, catalog)
    k_n = _pure_cov(snippets, [raw.snippet], params, catalog)[:, 0]
    kappa_bar2 = snippet_covariance(raw.snippet, raw.snippet, params, catalog)
    mu_n = prior_mean_vector(snippets, params, catalog)
    mu_new = float(prior_mean_vector([raw.snippet], params, catalog)[0])

    w = sigma_n_inv @ k_n
    gamma2 = max(float(kappa_bar2 - k_n @ w), 0.0)
    theta_only = mu_new + float(w @ (np.array([e.theta for e in entries])
                                     - mu_n))
    if beta == 0.0:
        return ModelAnswer(raw.theta, 0.0, gamma2, theta_only)
    if gamma2 == 0.0:
        return ModelAnswer(theta_only, 0.0, 0.0, theta_only)

    n = len(entries)
    full = np.empty((n + 1, n + 1))
    full[:n, :n] = sigma_n
    full[:n, n] = k_n
    full[n, :n] = k_n
    full[n, n] = kappa_bar2 + beta * beta
    k_full = np.concatenate([k_n, [kappa_bar2]])
    theta_full = np.concatenate([[e.theta for e in entries], [raw.theta]])
    mu_full = np.concatenate([mu_n, [mu_new]])
    sol = np.linalg.solve(full, np.column_stack([k_full,
                                                 theta_full - mu_full]))
    sigma_c2 = max(float(kappa_bar2 - k_full @ sol[:, 0]), 0.0)
    mu_c = mu_new + float(k_full @ sol[:, 1])
    return ModelAnswer(mu_c, math.sqrt(sigma_c2), gamma2, theta_only)
