"""Tests for Gaussian-conditioning inference: the O(n^2) path, the
direct reference path, prior moment estimators, and multipliers."""

import math

import numpy as np
import pytest

from querysage.errors import ConfigError, LearnError
from querysage.engine import RawAnswer
from querysage.frontend import AggKey, Predicate, QuerySnippet, Range
from querysage.inference import (
    ModelAnswer,
    confidence_multiplier,
    infer,
    infer_direct,
    prior_mean,
    sigma_hat,
)
from querysage.kernel import (
    CorrelationParams,
    CovarianceSystem,
    build_sigma,
    build_system,
    prior_mean_vector,
    region_volume,
)
from querysage.relation import AttributeCatalog
from querysage.synopsis import SynopsisEntry


CATALOG = AttributeCatalog(numeric={"day": (0.0, 100.0)}, categorical={},
                           cardinality=10_000)
FREQ = AggKey.freq()


def snip(lo, hi, g=FREQ):
    return QuerySnippet(g, Predicate.build(ranges={"day": Range(lo, hi)}))


def raw_for(snippet, theta, beta):
    return RawAnswer(snippet, theta, beta, m=100, sample_size=1000)


class TestConfidenceMultiplier:
    def test_ninety_five_percent_is_one_ninety_six(self):
        assert confidence_multiplier(0.95) == pytest.approx(1.959964,
                                                            abs=1e-4)

    def test_one_sigma_identity(self):
        assert confidence_multiplier(0.6827) == pytest.approx(1.0, abs=1e-3)

    def test_against_bisection_oracle(self):
        # independent route: bisect the erf-based normal CDF
        delta = 0.99
        target = 0.5 * (1.0 + delta)
        lo, hi = 0.0, 10.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < target:
                lo = mid
            else:
                hi = mid
        assert confidence_multiplier(delta) == pytest.approx(
            0.5 * (lo + hi), abs=1e-6)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.2, 1.7])
    def test_out_of_range_rejected(self, delta):
        with pytest.raises(ConfigError):
            confidence_multiplier(delta)


def entry(snippet, theta, beta):
    return SynopsisEntry(snippet=snippet, theta=theta, beta=beta,
                         last_used=0, data_version=0)


class TestPriorMean:
    def test_avg_is_arithmetic_mean(self):
        g = AggKey("avg", "sales")
        entries = [entry(snip(0, 10, g), 2.0, 0.1),
                   entry(snip(5, 20, g), 4.0, 0.1)]
        assert prior_mean(entries, g, CATALOG) == pytest.approx(3.0)

    def test_freq_is_mean_density_and_scales_with_volume(self):
        entries = [entry(snip(0.0, 1.0), 0.2, 0.1),
                   entry(snip(0.0, 2.0), 0.4, 0.1)]
        mu = prior_mean(entries, FREQ, CATALOG)
        assert mu == pytest.approx((0.2 / 1.0 + 0.4 / 2.0) / 2)
        params = CorrelationParams.build(FREQ, {"day": 10.0}, 1.0, mu)
        new = snip(0.0, 4.0)
        means = prior_mean_vector(
            [e.snippet for e in entries] + [new], params, CATALOG)
        np.testing.assert_allclose(means, [0.2, 0.4, 0.2 * 4.0])

    def test_empty_entries_rejected(self):
        with pytest.raises(LearnError):
            prior_mean([], FREQ, CATALOG)


class TestSigmaHat:
    def test_constant_answers_have_zero_variance(self):
        entries = [entry(snip(i, i + 1), 1.0, 0.1) for i in range(3)]
        assert sigma_hat(entries, AggKey("avg", "sales"), [1.0] * 3) == 0.0

    def test_population_variance(self):
        entries = [entry(snip(0, 1), 0.0, 0.1), entry(snip(1, 2), 2.0, 0.1)]
        assert sigma_hat(entries, AggKey("avg", "sales"), [1.0, 1.0]) == 1.0

    def test_freq_uses_densities(self):
        entries = [entry(snip(0, 1), 0.2, 0.1), entry(snip(0, 2), 0.4, 0.1)]
        assert sigma_hat(entries, FREQ, [1.0, 2.0]) == 0.0

    def test_single_entry_rejected(self):
        with pytest.raises(LearnError):
            sigma_hat([entry(snip(0, 1), 1.0, 0.1)], FREQ, [1.0])


class TestInferFrozenOracle:
    """Hand-built 1-entry system checked against a symbolic 2x2
    conditional worked out independently before this implementation."""

    def _system(self):
        c11, c12, c22 = 1.5, 0.9, 1.25
        beta1 = 0.5
        return CovarianceSystem(
            sigma_n=np.array([[c11 + beta1 ** 2]]),
            sigma_n_inv=np.array([[1.0 / (c11 + beta1 ** 2)]]),
            k_n=np.array([c12]),
            kappa_bar2=c22,
            mu_vec=np.array([1.5, 1.5]),
            theta_n=np.array([2.1]),
            jitter=0.0,
        )

    def test_matches_symbolic_two_by_two(self):
        got = infer(raw_for(snip(0, 1), 1.3, 0.4), self._system())
        assert got.gamma2 == pytest.approx(0.7871428571428571, rel=1e-12)
        assert got.theta_only == pytest.approx(1.8085714285714286, rel=1e-12)
        assert got.theta_model == pytest.approx(1.3859125188536953, rel=1e-12)
        assert got.beta_model ** 2 == pytest.approx(0.13297134238310709,
                                                    rel=1e-12)

    def test_zero_raw_error_returns_raw(self):
        got = infer(raw_for(snip(0, 1), 1.3, 0.0), self._system())
        assert got.theta_model == 1.3
        assert got.beta_model == 0.0

    def test_raw_beta_override(self):
        base = infer(raw_for(snip(0, 1), 1.3, 0.4), self._system())
        over = infer(raw_for(snip(0, 1), 1.3, 0.9), self._system(),
                     raw_beta=0.4)
        assert over == base

    def test_zero_gamma_returns_model_only(self):
        sys = self._system()
        collapsed = CovarianceSystem(
            sigma_n=sys.sigma_n, sigma_n_inv=sys.sigma_n_inv,
            k_n=np.array([math.sqrt(1.25 * 1.75)]), kappa_bar2=1.25,
            mu_vec=sys.mu_vec, theta_n=sys.theta_n, jitter=0.0)
        got = infer(raw_for(snip(0, 1), 1.3, 0.4), collapsed)
        assert got.beta_model == 0.0
        assert got.theta_model == got.theta_only


def random_case(rng, n=None):
    n = n or int(rng.integers(1, 11))
    entries = []
    for _ in range(n):
        lo = rng.uniform(0.0, 90.0)
        q = snip(lo, lo + rng.uniform(0.5, 10.0))
        entries.append(entry(q, rng.normal(0.1, 0.05),
                             rng.uniform(0.01, 0.2)))
    params = CorrelationParams.build(
        FREQ, {"day": rng.uniform(2.0, 40.0)},
        sigma2=rng.uniform(1e-6, 1e-4), mu=rng.uniform(0.0, 0.002))
    lo = rng.uniform(0.0, 90.0)
    new = snip(lo, lo + rng.uniform(0.5, 10.0))
    raw = raw_for(new, rng.normal(0.1, 0.05), rng.uniform(0.01, 0.2))
    return entries, params, raw


class TestInferMatchesDirect:
    def test_equivalent_on_random_systems(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            entries, params, raw = random_case(rng)
            fast = infer(raw, build_system(entries, raw.snippet, params,
                                           CATALOG))
            slow = infer_direct(raw, entries, params, CATALOG)
            assert fast.theta_model == pytest.approx(slow.theta_model,
                                                     rel=1e-9, abs=1e-12)
            assert fast.beta_model == pytest.approx(slow.beta_model,
                                                    rel=1e-9, abs=1e-12)

    def test_direct_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            entries, params, raw = random_case(rng)
            system = build_system(entries, raw.snippet, params, CATALOG)
            got = infer_direct(raw, entries, params, CATALOG)
            assert got.beta_model ** 2 <= system.kappa_bar2 * (1 + 1e-9)


class TestGuarantees:
    def test_improved_error_never_exceeds_raw(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            entries, params, raw = random_case(rng)
            got = infer(raw, build_system(entries, raw.snippet, params,
                                          CATALOG))
            assert got.beta_model <= raw.beta

    def test_blended_error_monotone_in_both_variances(self):
        grid = np.linspace(0.01, 4.0, 12)
        for b2 in grid:
            vals = [b2 * g2 / (b2 + g2) for g2 in grid]
            assert all(x < y for x, y in zip(vals, vals[1:]))
        for g2 in grid:
            vals = [b2 * g2 / (b2 + g2) for b2 in grid]
            assert all(x < y for x, y in zip(vals, vals[1:]))

    def test_near_exact_duplicate_interpolates(self):
        """A duplicate of a past snippet whose raw error was ~0 pulls the
        model answer to that past answer."""
        q = snip(20.0, 30.0)
        entries = [entry(q, 0.50, 0.0)]
        params = CorrelationParams.build(FREQ, {"day": 10.0},
                                         sigma2=1e-4, mu=0.0)
        system = build_system(entries, q, params, CATALOG)
        got = infer(raw_for(q, 0.55, 0.3), system)
        assert got.theta_model == pytest.approx(0.50, abs=1e-6)
        assert got.beta_model < 1e-2


class TestModelAnswerShape:
    def test_fields(self):
        m = ModelAnswer(1.0, 0.5, 0.3, 1.1)
        assert (m.theta_model, m.beta_model, m.gamma2, m.theta_only) == (
            1.0, 0.5, 0.3, 1.1)
