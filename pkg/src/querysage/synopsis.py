"""The query synopsis: the store of past snippets with their raw
answers and errors, capped per aggregate key with LRU eviction, plus
the trained-model snapshot and JSON-lines persistence."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .frontend import AggKey, Predicate, QuerySnippet, Range
from .kernel import CorrelationParams
from .relation import AttributeCatalog

FORMAT_TAG = "querysage-synopsis/1"


@dataclass
class SynopsisEntry:
    """One remembered answer: a snippet, its raw value, its raw error."""

    snippet: QuerySnippet
    theta: float
    beta: float
    last_used: int
    data_version: int

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise DataError(f"entry theta must be finite, got {self.theta}")
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise DataError(f"entry beta must be finite and >= 0, "
                            f"got {self.beta}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Self-contained inference snapshot for one aggregate key.

    Everything the per-query path needs is copied at train time, so
    later inserts, evictions, and append adjustments cannot skew a
    model that was fitted against the older answers.
    """

    g: AggKey
    params: CorrelationParams
    entries: tuple[SynopsisEntry, ...]
    sigma_n: np.ndarray
    sigma_n_inv: np.ndarray
    jitter: float
    catalog: AttributeCatalog
    data_version: int

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def precomputed(self):
        return self.sigma_n, self.sigma_n_inv, self.jitter


class Synopsis:
    """Per-aggregate-key entry lists under a shared logical clock."""

    def __init__(self, cap: int = 2000):
        if cap < 1:
            raise DataError(f"synopsis cap must be >= 1, got {cap}")
        self.cap = cap
        self._entries: dict[AggKey, list[SynopsisEntry]] = {}
        self._clock = 0
        self.trained: dict[AggKey, TrainedModel] = {}

    # -- clock ---------------------------------------------------------------
    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    @property
    def clock(self) -> int:
        return self._clock

    # -- mutation ------------------------------------------------------------
    def insert(self, entry: SynopsisEntry) -> None:
        """Append under the entry's aggregate key; evict LRU past the cap."""
        entry.last_used = self._tick()
        bucket = self._entries.setdefault(entry.snippet.g, [])
        bucket.append(entry)
        if len(bucket) > self.cap:
            victim = min(range(len(bucket)), key=lambda i: bucket[i].last_used)
            del bucket[victim]

    def touch(self, g: AggKey, snippets: Iterable[QuerySnippet]) -> None:
        """Mark entries as used by an inference over these snippets."""
        wanted = set(snippets)
        stamp = self._tick()
        for entry in self._entries.get(g, ()):
            if entry.snippet in wanted:
                entry.last_used = stamp

    def evict_key(self, g: AggKey) -> int:
        """Drop every entry under g; returns how many were dropped."""
        gone = len(self._entries.pop(g, ()))
        self.trained.pop(g, None)
        return gone

    def remove_where(self, g: AggKey, predicate) -> int:
        """Drop entries under g matching the predicate; returns the count."""
        bucket = self._entries.get(g)
        if not bucket:
            return 0
        kept = [e for e in bucket if not predicate(e)]
        removed = len(bucket) - len(kept)
        if kept:
            self._entries[g] = kept
        else:
            del self._entries[g]
        return removed

    # -- access --------------------------------------------------------------
    def entries_for(self, g: AggKey) -> list[SynopsisEntry]:
        """Entries under g in insertion order (eviction keeps that order)."""
        return list(self._entries.get(g, ()))

    def keys(self) -> list[AggKey]:
        return sorted(self._entries, key=str)

    def size(self, g: AggKey | None = None) -> int:
        if g is not None:
            return len(self._entries.get(g, ()))
        return sum(len(v) for v in self._entries.values())


# -- JSON encoding ------------------------------------------------------------

def _num(x: float):
    if math.isinf(x):
        return None
    return float(x)


def _range_to_json(attr: str, r: Range) -> list:
    return [attr, _num(r.lo), _num(r.hi), r.lo_strict, r.hi_strict]


def _range_from_json(row: Sequence) -> tuple[str, Range]:
    attr, lo, hi, lo_s, hi_s = row
    return attr, Range(-math.inf if lo is None else float(lo),
                       math.inf if hi is None else float(hi),
                       bool(lo_s), bool(hi_s))


def snippet_to_json(snippet: QuerySnippet) -> dict:
    return {
        "g": str(snippet.g),
        "ranges": [_range_to_json(a, r) for a, r in snippet.predicate.ranges],
        "in": [[a, list(vs)] for a, vs in snippet.predicate.in_lists],
    }


def snippet_from_json(obj: Mapping) -> QuerySnippet:
    g = AggKey.parse(obj["g"])
    ranges = tuple(_range_from_json(row) for row in obj["ranges"])
    in_lists = tuple((a, tuple(vs)) for a, vs in obj["in"])
    return QuerySnippet(g, Predicate(ranges, in_lists))


def params_to_json(params: CorrelationParams) -> dict:
    return {
        "g": str(params.g),
        "lengths": [[a, l] for a, l in params.lengths],
        "sigma2": params.sigma2,
        "mu": params.mu,
    }


def params_from_json(obj: Mapping) -> CorrelationParams:
    return CorrelationParams(
        AggKey.parse(obj["g"]),
        tuple((a, float(l)) for a, l in obj["lengths"]),
        float(obj["sigma2"]),
        float(obj["mu"]),
    )


def catalog_to_json(cat: AttributeCatalog) -> dict:
    return {
        "numeric": {a: [_num(lo), _num(hi)]
                    for a, (lo, hi) in sorted(cat.numeric.items())},
        "categorical": {a: list(vs)
                        for a, vs in sorted(cat.categorical.items())},
        "rows": int(cat.cardinality),
    }


def catalog_from_json(obj: Mapping) -> AttributeCatalog:
    return AttributeCatalog(
        {a: (float(lo), float(hi)) for a, (lo, hi) in obj["numeric"].items()},
        {a: tuple(str(v) for v in vs)
         for a, vs in obj["categorical"].items()},
        int(obj["rows"]),
    )


def _trained_to_json(model: TrainedModel) -> dict:
    return {
        "g": str(model.g),
        "params": params_to_json(model.params),
        "entries": [
            {
                "snippet": snippet_to_json(e.snippet),
                "theta": e.theta,
                "beta": e.beta,
                "ts": e.last_used,
                "ver": e.data_version,
            }
            for e in model.entries
        ],
        "sigma": model.sigma_n.tolist(),
        "sigma_inv": model.sigma_n_inv.tolist(),
        "jitter": model.jitter,
        "catalog": catalog_to_json(model.catalog),
        "ver": model.data_version,
    }


def _trained_from_json(obj: Mapping) -> TrainedModel:
    entries = tuple(
        SynopsisEntry(
            snippet=snippet_from_json(e["snippet"]),
            theta=float(e["theta"]),
            beta=float(e["beta"]),
            last_used=int(e["ts"]),
            data_version=int(e["ver"]),
        )
        for e in obj["entries"]
    )
    return TrainedModel(
        g=AggKey.parse(obj["g"]),
        params=params_from_json(obj["params"]),
        entries=entries,
        sigma_n=np.array(obj["sigma"], dtype=np.float64),
        sigma_n_inv=np.array(obj["sigma_inv"], dtype=np.float64),
        jitter=float(obj["jitter"]),
        catalog=catalog_from_json(obj["catalog"]),
        data_version=int(obj["ver"]),
    )


def save(synopsis: Synopsis, path: str | os.PathLike) -> None:
    """JSON-lines dump: a header line, then one line per entry."""
    header = {
        "format": FORMAT_TAG,
        "cap": synopsis.cap,
        "clock": synopsis.clock,
        "trained": [_trained_to_json(synopsis.trained[g])
                    for g in sorted(synopsis.trained, key=str)],
    }
    lines = [json.dumps(header, sort_keys=True)]
    for g in synopsis.keys():
        for e in synopsis.entries_for(g):
            lines.append(json.dumps({
                "g": str(g),
                "snippet": snippet_to_json(e.snippet),
                "theta": e.theta,
                "beta": e.beta,
                "ts": e.last_used,
                "ver": e.data_version,
            }, sort_keys=True))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path: str | os.PathLike) -> Synopsis:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty synopsis file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: corrupt header: {exc}") from exc
    tag = header.get("format")
    if tag != FORMAT_TAG:
        raise DataError(f"{path}: unknown synopsis format tag {tag!r}")
    synopsis = Synopsis(cap=int(header["cap"]))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entry = SynopsisEntry(
                snippet=snippet_from_json(obj["snippet"]),
                theta=float(obj["theta"]),
                beta=float(obj["beta"]),
                last_used=int(obj["ts"]),
                data_version=int(obj["ver"]),
            )
        except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{lineno}: corrupt entry line: {exc}") \
                from exc
        synopsis._entries.setdefault(entry.snippet.g, []).append(entry)
        if synopsis.size(entry.snippet.g) > synopsis.cap:
            raise DataError(f"{path}:{lineno}: entries exceed cap "
                            f"{synopsis.cap}")
    for block in header.get("trained", ()):
        try:
            model = _trained_from_json(block)
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:1: corrupt trained block: {exc}") from exc
        synopsis.trained[model.g] = model
    synopsis._clock = int(header.get("clock", 0))
    return synopsis
