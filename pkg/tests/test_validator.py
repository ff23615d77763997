"""Tests for model validation and final answer assembly."""

import pytest

from querysage.engine import RawAnswer
from querysage.errors import ConfigError
from querysage.frontend import AggKey, Predicate, QuerySnippet
from querysage.inference import ModelAnswer
from querysage.validator import (
    REASON_NEGATIVE_FREQ,
    REASON_NONE,
    REASON_OUTSIDE,
    REASON_UNTRAINED,
    VALIDATION_CHEBYSHEV,
    finalize,
    likely_region_halfwidth,
    passthrough,
    validate,
)


AVG_G = AggKey("avg", "sales")
FREQ_G = AggKey.freq()
SNIP = QuerySnippet(FREQ_G, Predicate.build())


def raw(theta, beta):
    return RawAnswer(SNIP, theta, beta, m=100, sample_size=1000)


def model(theta, beta=0.01, gamma2=0.5, theta_only=None):
    return ModelAnswer(theta, beta, gamma2,
                       theta if theta_only is None else theta_only)


class TestValidate:
    def test_zero_deviation_accepts(self):
        assert validate(model(5.0), raw(5.0, 0.3), delta_v=0.99)

    def test_exact_raw_answer_rejects_any_disagreement(self):
        assert not validate(model(5.001), raw(5.0, 0.0), delta_v=0.99)

    def test_accepts_inside_likely_region(self):
        # t = 2.576 * 0.1 at delta_v 0.99
        assert validate(model(5.0), raw(5.2, 0.1), delta_v=0.99)

    def test_rejects_outside_likely_region(self):
        assert not validate(model(5.0), raw(5.3, 0.1), delta_v=0.99)

    def test_chebyshev_region_is_wider(self):
        t_clt = likely_region_halfwidth(0.1, 0.99)
        t_cheb = likely_region_halfwidth(0.1, 0.99, VALIDATION_CHEBYSHEV)
        assert t_cheb == pytest.approx(0.1 / (0.01 ** 0.5))
        assert t_cheb > t_clt
        assert validate(model(5.0), raw(5.3, 0.1), delta_v=0.99,
                        mode=VALIDATION_CHEBYSHEV)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            likely_region_halfwidth(0.1, 0.99, "bayes")


class TestFinalize:
    def test_accepted_model_is_used(self):
        got = finalize(AVG_G, model(5.0, 0.05), raw(5.1, 0.3), accept=True)
        assert got.model_used
        assert got.theta_hat == 5.0 and got.beta_hat == 0.05
        assert got.rejection_reason == REASON_NONE

    def test_rejected_model_falls_back_to_raw(self):
        got = finalize(AVG_G, model(9.0, 0.05), raw(5.1, 0.3), accept=False)
        assert not got.model_used
        assert got.theta_hat == 5.1 and got.beta_hat == 0.3
        assert got.rejection_reason == REASON_OUTSIDE

    def test_negative_freq_estimate_rejected(self):
        got = finalize(FREQ_G, model(-0.01, 0.005), raw(0.002, 0.01),
                       accept=True)
        assert not got.model_used
        assert got.theta_hat == 0.002
        assert got.rejection_reason == REASON_NEGATIVE_FREQ

    def test_negative_avg_estimate_is_fine(self):
        got = finalize(AVG_G, model(-3.0, 0.05), raw(-2.9, 0.2), accept=True)
        assert got.model_used and got.theta_hat == -3.0

    def test_accepted_ci_halfwidth_at_95(self):
        got = finalize(AVG_G, model(5.0, 0.05), raw(5.1, 0.3), accept=True,
                       delta=0.95)
        half = (got.ci[1] - got.ci[0]) / 2
        assert half == pytest.approx(1.96 * 0.05, abs=1e-4)
        assert (got.ci[0] + got.ci[1]) / 2 == pytest.approx(5.0)

    def test_freq_ci_low_clamped_at_zero(self):
        got = finalize(FREQ_G, model(0.005, 0.01), raw(0.004, 0.02),
                       accept=True, delta=0.95)
        assert got.ci[0] == 0.0
        assert got.ci[1] == pytest.approx(0.0246, abs=1e-4)

    def test_improved_error_never_exceeds_raw_on_fallback(self):
        got = finalize(AVG_G, model(9.0, 0.05), raw(5.1, 0.3), accept=False)
        assert got.beta_hat <= 0.3


class TestPassthrough:
    def test_carries_raw_values_and_reason(self):
        got = passthrough(AVG_G, raw(4.2, 0.25), delta=0.95,
                          reason=REASON_UNTRAINED)
        assert not got.model_used
        assert got.theta_hat == 4.2 and got.beta_hat == 0.25
        assert got.rejection_reason == REASON_UNTRAINED
        assert got.ci[0] == pytest.approx(4.2 - 1.96 * 0.25, abs=1e-3)

    def test_freq_passthrough_clamps_interval(self):
        got = passthrough(FREQ_G, raw(0.001, 0.05))
        assert got.ci[0] == 0.0
