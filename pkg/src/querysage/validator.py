"""Model validation and final answer assembly.

A fitted model can be wrong (bad local optimum, drifted data), so the
model-based answer is accepted only when the raw answer lies inside the
model's likely region: |theta_raw - theta_model| < t where t makes
Pr(|X - theta_model| < t) >= delta_v for X distributed like the raw
answer. Rejected, negative-frequency, untrained, and degenerate cases
all fall back to the raw answer, which keeps the no-regression bound
trivially intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import RawAnswer
from .errors import ConfigError
from .frontend import AggKey
from .inference import ModelAnswer, confidence_multiplier

REASON_NONE = "none"
REASON_OUTSIDE = "outside_likely_region"
REASON_NEGATIVE_FREQ = "negative_freq"
REASON_UNTRAINED = "untrained"
REASON_DEGENERATE = "degenerate"

VALIDATION_CLT = "clt"
VALIDATION_CHEBYSHEV = "chebyshev"


@dataclass(frozen=True)
class ImprovedAnswer:
    theta_hat: float
    beta_hat: float
    model_used: bool
    ci: tuple[float, float]
    rejection_reason: str


def likely_region_halfwidth(beta_raw: float, delta_v: float,
                            mode: str = VALIDATION_CLT) -> float:
    """The t in Pr(|X - theta_model| < t) >= delta_v."""
    if mode == VALIDATION_CLT:
        return confidence_multiplier(delta_v) * beta_raw
    if mode == VALIDATION_CHEBYSHEV:
        if not (0.0 < delta_v < 1.0):
            raise ConfigError(f"delta_v must be in (0, 1), got {delta_v}")
        return beta_raw / math.sqrt(1.0 - delta_v)
    raise ConfigError(f"unknown validation mode {mode!r}")


def validate(model: ModelAnswer, raw: RawAnswer, delta_v: float = 0.99,
             mode: str = VALIDATION_CLT) -> bool:
    """Accept the model answer iff the raw answer is inside the likely
    region around it."""
    t = likely_region_halfwidth(raw.beta, delta_v, mode)
    return abs(raw.theta - model.theta_model) < t


def _interval(g: AggKey, theta: float, beta: float,
              delta: float) -> tuple[float, float]:
    half = confidence_multiplier(delta) * beta
    lo, hi = theta - half, theta + half
    if g.kind == "freq":
        lo = max(lo, 0.0)
    return lo, hi


def finalize(g: AggKey, model: ModelAnswer, raw: RawAnswer, accept: bool,
             delta: float = 0.95) -> ImprovedAnswer:
    """Pick the final answer and attach its confidence interval."""
    if accept and not (g.kind == "freq" and model.theta_model < 0.0):
        return ImprovedAnswer(
            theta_hat=model.theta_model,
            beta_hat=model.beta_model,
            model_used=True,
            ci=_interval(g, model.theta_model, model.beta_model, delta),
            rejection_reason=REASON_NONE,
        )
    reason = REASON_OUTSIDE
    if accept and g.kind == "freq" and model.theta_model < 0.0:
        reason = REASON_NEGATIVE_FREQ
    return passthrough(g, raw, delta, reason)


def passthrough(g: AggKey, raw: RawAnswer, delta: float = 0.95,
                reason: str = REASON_NONE) -> ImprovedAnswer:
    """Raw answer as the final answer (no model, or model set aside)."""
    return ImprovedAnswer(
        theta_hat=raw.theta,
        beta_hat=raw.beta,
        model_used=False,
        ci=_interval(g, raw.theta, raw.beta, delta),
        rejection_reason=reason,
    )
