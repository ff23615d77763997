"""Tests for the append adjuster: shift estimation, entry adjustment,
and stale-entry eviction."""

import math

import numpy as np
import pytest

from querysage.append import (
    ShiftEstimate,
    adjust_entry,
    adjust_synopsis,
    estimate_shift,
    handle_freq_on_append,
)
from querysage.errors import AppendError
from querysage.frontend import AggKey, Predicate, QuerySnippet, Range
from querysage.relation import Attribute, Relation, Schema
from querysage.synopsis import Synopsis, SynopsisEntry


SCHEMA = Schema((Attribute("d", "dimension", "numeric"),
                 Attribute("x", "measure", "numeric"),
                 Attribute("y", "measure", "numeric")))


def make_relation(n, seed, shift=0.0, version=0):
    rng = np.random.default_rng(seed)
    return Relation(SCHEMA, {
        "d": rng.uniform(0.0, 1.0, n),
        "x": rng.normal(5.0 + shift, 2.0, n),
        "y": rng.normal(1.0, 0.5, n),
    }, version=version)


def avg_entry(arg="x", theta=10.0, beta=1.0, ver=0):
    q = QuerySnippet(AggKey("avg", arg),
                     Predicate.build(ranges={"d": Range(0.0, 0.5)}))
    return SynopsisEntry(q, theta, beta, 0, ver)


def freq_entry(ver=0, lo=0.0):
    q = QuerySnippet(AggKey.freq(),
                     Predicate.build(ranges={"d": Range(lo, lo + 0.3)}))
    return SynopsisEntry(q, 0.3, 0.01, 0, ver)


class TestEstimateShift:
    def test_fields_record_row_counts(self):
        old = make_relation(5000, 1)
        new = make_relation(2000, 2)
        got = estimate_shift(old, new, "x", 0.1, seed=0)
        assert got.n_old == 5000 and got.n_new == 2000
        assert got.attribute == "x"

    def test_null_shift_estimates_near_zero(self):
        """Pilot observed 100/100 seeds inside 3 sigma."""
        old = make_relation(5000, 1)
        hits = 0
        for seed in range(100):
            new = make_relation(2000, 1000 + seed)
            s = estimate_shift(old, new, "x", 0.1, seed)
            hits += abs(s.mu_k) <= 3.0 * math.sqrt(s.eta2_k)
        assert hits >= 97

    def test_deterministic_constant_shift_at_full_rate(self):
        old = make_relation(400, 3)
        shifted = Relation(SCHEMA, {
            "d": old.column("d"),
            "x": old.column("x") + 2.5,
            "y": old.column("y"),
        })
        got = estimate_shift(old, shifted, "x", 1.0, seed=0)
        assert got.mu_k == pytest.approx(2.5, abs=1e-9)

    def test_drift_coverage(self):
        """Pilot observed 191/200 seeds inside 2 sigma at drift +1."""
        old = make_relation(5000, 1)
        hits = 0
        for seed in range(200):
            new = make_relation(2000, 2000 + seed, shift=1.0)
            s = estimate_shift(old, new, "x", 0.1, seed)
            hits += abs(s.mu_k - 1.0) <= 2.0 * math.sqrt(s.eta2_k)
        assert hits >= 180

    def test_empty_batch_rejected(self):
        old = make_relation(100, 1)
        empty = Relation(SCHEMA, {"d": np.array([]), "x": np.array([]),
                                  "y": np.array([])})
        with pytest.raises(AppendError):
            estimate_shift(old, empty, "x", 0.5, seed=0)

    def test_too_small_sample_rejected(self):
        old = make_relation(100, 1)
        new = make_relation(10, 2)
        with pytest.raises(AppendError):
            estimate_shift(old, new, "x", 0.1, seed=0)


class TestAdjustEntry:
    def test_frozen_lemma_oracle(self):
        """theta=10, beta=1, mu=2, eta=1, 300 old + 100 new rows; the
        expected numbers were evaluated independently before build."""
        shift = ShiftEstimate("x", mu_k=2.0, eta2_k=1.0, n_old=300,
                              n_new=100)
        got = adjust_entry(avg_entry(), shift, new_version=1)
        assert shift.weight == pytest.approx(0.25)
        assert got.theta == pytest.approx(10.5)
        assert got.beta == pytest.approx(1.03077640640442, abs=1e-10)
        assert got.data_version == 1

    def test_zero_weight_append_changes_nothing(self):
        shift = ShiftEstimate("x", mu_k=2.0, eta2_k=1.0, n_old=300, n_new=0)
        got = adjust_entry(avg_entry(), shift, new_version=1)
        assert got.theta == 10.0 and got.beta == 1.0

    def test_zero_shift_zero_variance_changes_nothing(self):
        shift = ShiftEstimate("x", mu_k=0.0, eta2_k=0.0, n_old=300,
                              n_new=100)
        got = adjust_entry(avg_entry(), shift, new_version=1)
        assert got.theta == 10.0 and got.beta == 1.0

    def test_error_only_inflates(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            shift = ShiftEstimate("x", mu_k=rng.normal(0, 3),
                                  eta2_k=rng.uniform(0, 2),
                                  n_old=int(rng.integers(10, 1000)),
                                  n_new=int(rng.integers(1, 1000)))
            e = avg_entry(beta=rng.uniform(0.01, 2.0))
            assert adjust_entry(e, shift, 1).beta >= e.beta

    def test_aggregate_mismatch_rejected(self):
        shift = ShiftEstimate("x", 1.0, 0.5, 300, 100)
        with pytest.raises(AppendError):
            adjust_entry(avg_entry(arg="y"), shift, new_version=1)
        with pytest.raises(AppendError):
            adjust_entry(freq_entry(), shift, new_version=1)

    def test_double_adjustment_for_same_event_rejected(self):
        shift = ShiftEstimate("x", 1.0, 0.5, 300, 100)
        once = adjust_entry(avg_entry(), shift, new_version=1)
        with pytest.raises(AppendError):
            adjust_entry(once, shift, new_version=1)


class TestHandleFreqOnAppend:
    def test_no_freq_entries_is_noop(self):
        s = Synopsis()
        s.insert(avg_entry())
        assert handle_freq_on_append(s, new_version=1) == 0
        assert s.size() == 1

    def test_stale_freq_entries_evicted(self):
        s = Synopsis()
        for i in range(5):
            s.insert(freq_entry(ver=0, lo=0.1 * i))
        assert handle_freq_on_append(s, new_version=1) == 5
        assert s.size(AggKey.freq()) == 0

    def test_post_append_freq_entries_survive(self):
        s = Synopsis()
        s.insert(freq_entry(ver=0, lo=0.0))
        s.insert(freq_entry(ver=1, lo=0.2))
        assert handle_freq_on_append(s, new_version=1) == 1
        kept = s.entries_for(AggKey.freq())
        assert len(kept) == 1 and kept[0].data_version == 1


class TestAdjustSynopsis:
    def test_orchestrates_all_keys(self):
        old = make_relation(5000, 1)
        batch = make_relation(1000, 2, shift=1.0)
        s = Synopsis()
        s.insert(avg_entry(arg="x", ver=0))
        s.insert(avg_entry(arg="y", ver=0))
        derived = SynopsisEntry(
            QuerySnippet(AggKey("avg", "x + y"), Predicate.build()),
            2.0, 0.1, 0, 0)
        s.insert(derived)
        s.insert(freq_entry(ver=0))
        fresh = avg_entry(arg="x", ver=1, theta=4.0)
        s.insert(fresh)

        report = adjust_synopsis(s, old, batch, new_version=1,
                                 sample_rate=0.2, seed=9)
        assert report == {"adjusted": 2, "evicted": 2}
        for e in s.entries_for(AggKey("avg", "x")):
            assert e.data_version == 1
        # the already-current entry was left untouched
        assert any(e.theta == 4.0 for e in s.entries_for(AggKey("avg", "x")))
        assert s.size(AggKey("avg", "x + y")) == 0
        assert s.size(AggKey.freq()) == 0

    def test_adjusted_values_follow_lemma(self):
        old = make_relation(5000, 1)
        batch = make_relation(1000, 2, shift=1.0)
        s = Synopsis()
        e = avg_entry(arg="x", theta=5.0, beta=0.5, ver=0)
        s.insert(e)
        adjust_synopsis(s, old, batch, new_version=1, sample_rate=0.2,
                        seed=9)
        shift = estimate_shift(old, batch, "x", 0.2, seed=9)
        live = s.entries_for(AggKey("avg", "x"))[0]
        assert live.theta == pytest.approx(5.0 + shift.weight * shift.mu_k)
        assert live.beta == pytest.approx(
            math.sqrt(0.25 + shift.weight ** 2 * shift.eta2_k))
