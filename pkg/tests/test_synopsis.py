"""Tests for the synopsis store: LRU capping, ordering, persistence."""

import json

import numpy as np
import pytest

from querysage.errors import DataError
from querysage.frontend import AggKey, Predicate, QuerySnippet, Range
from querysage.kernel import CorrelationParams
from querysage.relation import AttributeCatalog
from querysage.synopsis import (
    Synopsis,
    SynopsisEntry,
    TrainedModel,
    load,
    save,
    snippet_from_json,
    snippet_to_json,
)


AVG_G = AggKey("avg", "sales")


def snip(lo, hi, g=AVG_G):
    return QuerySnippet(g, Predicate.build(ranges={"day": Range(lo, hi)}))


def entry(lo, hi, theta=1.0, beta=0.1, g=AVG_G, ver=0):
    return SynopsisEntry(snippet=snip(lo, hi, g), theta=theta, beta=beta,
                         last_used=0, data_version=ver)


class TestInsertAndCap:
    def test_insert_into_empty_gives_size_one(self):
        s = Synopsis()
        s.insert(entry(0, 1))
        assert s.size(AVG_G) == 1

    def test_default_cap_is_two_thousand(self):
        assert Synopsis().cap == 2000

    def test_cap_evicts_least_recently_used(self):
        s = Synopsis()
        for i in range(2001):
            s.insert(entry(i, i + 1))
        assert s.size(AVG_G) == 2000
        survivors = s.entries_for(AVG_G)
        # the first-inserted (oldest-used) entry is the one gone
        assert survivors[0].snippet == snip(1, 2)

    def test_touch_protects_entry_from_eviction(self):
        s = Synopsis(cap=3)
        for i in range(3):
            s.insert(entry(i, i + 1))
        s.touch(AVG_G, [snip(0, 1)])
        s.insert(entry(99, 100))
        snippets = [e.snippet for e in s.entries_for(AVG_G)]
        assert snip(0, 1) in snippets
        assert snip(1, 2) not in snippets

    def test_eviction_preserves_relative_order(self):
        s = Synopsis(cap=3)
        for i in range(4):
            s.insert(entry(i, i + 1))
        got = [e.snippet.predicate.range_map["day"].lo
               for e in s.entries_for(AVG_G)]
        assert got == [1.0, 2.0, 3.0]

    def test_keys_are_independent_buckets(self):
        s = Synopsis(cap=2)
        s.insert(entry(0, 1, g=AVG_G))
        s.insert(entry(0, 1, g=AggKey.freq()))
        s.insert(entry(1, 2, g=AggKey.freq()))
        assert s.size(AVG_G) == 1
        assert s.size(AggKey.freq()) == 2
        assert s.size() == 3

    def test_cap_never_exceeded_under_random_workload(self):
        rng = np.random.default_rng(5)
        s = Synopsis(cap=7)
        pool = [snip(i, i + 1) for i in range(20)]
        for step in range(400):
            if rng.random() < 0.7:
                q = pool[rng.integers(len(pool))]
                s.insert(SynopsisEntry(q, 1.0, 0.1, 0, 0))
            else:
                chosen = rng.choice(len(pool), size=3, replace=False)
                s.touch(AVG_G, [pool[i] for i in chosen])
            assert s.size(AVG_G) <= 7

    def test_bad_cap_rejected(self):
        with pytest.raises(DataError):
            Synopsis(cap=0)


class TestEntriesFor:
    def test_missing_key_is_empty(self):
        assert Synopsis().entries_for(AVG_G) == []

    def test_insertion_order_is_stable(self):
        s = Synopsis()
        for lo in (3, 1, 2):
            s.insert(entry(lo, lo + 1))
        got = [e.snippet.predicate.range_map["day"].lo
               for e in s.entries_for(AVG_G)]
        assert got == [3.0, 1.0, 2.0]

    def test_returned_list_is_a_copy(self):
        s = Synopsis()
        s.insert(entry(0, 1))
        s.entries_for(AVG_G).clear()
        assert s.size(AVG_G) == 1


class TestEntryValidation:
    def test_nonfinite_theta_rejected(self):
        with pytest.raises(DataError):
            SynopsisEntry(snip(0, 1), float("nan"), 0.1, 0, 0)

    def test_negative_beta_rejected(self):
        with pytest.raises(DataError):
            SynopsisEntry(snip(0, 1), 1.0, -0.5, 0, 0)


class TestSnippetJson:
    def test_round_trip_with_infinities_and_strictness(self):
        q = QuerySnippet(AggKey.freq(), Predicate.build(
            ranges={"day": Range(lo=3.0, lo_strict=True)},
            in_lists={"region": ("east", "west")},
        ))
        assert snippet_from_json(snippet_to_json(q)) == q

    def test_infinite_bounds_encode_as_null(self):
        q = snip(float("-inf"), 5.0)
        encoded = snippet_to_json(q)
        assert encoded["ranges"][0][1] is None


class TestPersistence:
    def _populate(self, s, count, g=AVG_G):
        for i in range(count):
            s.insert(entry(i, i + 1, theta=float(i), beta=0.01 * (i + 1), g=g))

    def test_save_load_identity_on_100_entries(self, tmp_path):
        s = Synopsis(cap=500)
        self._populate(s, 60)
        self._populate(s, 40, g=AggKey.freq())
        path = tmp_path / "syn.jsonl"
        save(s, path)
        back = load(path)
        assert back.cap == 500
        assert back.clock == s.clock
        for g in (AVG_G, AggKey.freq()):
            a = s.entries_for(g)
            b = back.entries_for(g)
            assert len(a) == len(b)
            for x, y in zip(a, b):
                assert x == y

    def test_save_is_bit_stable(self, tmp_path):
        s = Synopsis()
        self._populate(s, 25)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save(s, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        save(Synopsis(), path)
        back = load(path)
        assert back.size() == 0 and back.trained == {}

    def test_unknown_format_tag_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"format": "querysage-synopsis/99",
                                    "cap": 10, "clock": 0, "trained": []}) + "\n")
        with pytest.raises(DataError, match="format tag"):
            load(path)

    def test_corrupt_line_reports_line_number(self, tmp_path):
        s = Synopsis()
        self._populate(s, 2)
        path = tmp_path / "c.jsonl"
        save(s, path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][:-10]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=":3:"):
            load(path)

    def test_trained_block_round_trips(self, tmp_path):
        s = Synopsis()
        self._populate(s, 3)
        entries = tuple(s.entries_for(AVG_G))
        params = CorrelationParams.build(AVG_G, {"day": 4.0}, 2.0, 1.5)
        sigma = np.array([[2.0, 0.5, 0.1],
                          [0.5, 2.0, 0.5],
                          [0.1, 0.5, 2.0]])
        cat = AttributeCatalog({"day": (0.0, 30.0)}, {"city": ("ann", "bos")},
                               1200)
        model = TrainedModel(
            g=AVG_G, params=params, entries=entries, sigma_n=sigma,
            sigma_n_inv=np.linalg.inv(sigma), jitter=1e-8, catalog=cat,
            data_version=0)
        s.trained[AVG_G] = model
        path = tmp_path / "t.jsonl"
        save(s, path)
        back = load(path).trained[AVG_G]
        assert back.params == params
        assert back.entries == entries
        np.testing.assert_array_equal(back.sigma_n, sigma)
        np.testing.assert_array_equal(back.sigma_n_inv, np.linalg.inv(sigma))
        assert back.jitter == 1e-8
        assert back.catalog.numeric == {"day": (0.0, 30.0)}
        assert back.catalog.categorical == {"city": ("ann", "bos")}
        assert back.catalog.cardinality == 1200

    def test_evict_key_clears_entries_and_model(self):
        s = Synopsis()
        self._populate(s, 3)
        s.trained[AVG_G] = object()
        assert s.evict_key(AVG_G) == 3
        assert s.size(AVG_G) == 0
        assert AVG_G not in s.trained
