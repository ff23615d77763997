"""The sampling AQP engine: raw answers with CLT error estimates.

This is the package's black-box approximate processor. It draws uniform
row samples, evaluates snippets over them, and attaches the one-standard-
deviation expected error:

    AVG:  beta = sample stddev / sqrt(m)        (m matched rows)
    FREQ: beta = sqrt(p * (1 - p) / sample_size)

plus an online-aggregation stream that refines the answer batch by batch
over a seeded random permutation and terminates with the exact answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigError, EmptySelectionError
from .frontend import (
    AggKey,
    And,
    BoolExpr,
    InAtom,
    Or,
    Predicate,
    QuerySnippet,
    RangeAtom,
    Range,
    eval_expr,
    parse_expr_text,
)
from .relation import Relation


@dataclass(frozen=True)
class RawAnswer:
    """A raw (sample-based) answer: estimate, expected error, support."""

    snippet: QuerySnippet
    theta: float
    beta: float
    m: int            # matched rows used by the estimate
    sample_size: int  # rows scanned (== relation rows for exact answers)

    @property
    def exact(self) -> bool:
        return self.beta == 0.0


class Sample:
    """A reproducible uniform row sample of one relation version."""

    def __init__(self, relation: Relation, rate: float, seed: int,
                 indices: np.ndarray):
        self.relation = relation
        self.parent_version = relation.version
        self.rate = rate
        self.seed = seed
        self.indices = indices
        # slice once; every snippet estimate reuses these columns
        self.columns = relation.take(indices)

    @property
    def size(self) -> int:
        return len(self.indices)


def build_sample(relation: Relation, rate: float, seed: int) -> Sample:
    """Uniform sample without replacement; |indices| = round(rate * rows)."""
    if not (0.0 < rate <= 1.0):
        raise ConfigError(f"sample rate {rate} outside (0, 1]")
    n = relation.row_count
    size = int(round(rate * n))
    if size == 0:
        raise ConfigError(f"sample rate {rate} rounds to an empty sample "
                          f"({n} rows)")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=size, replace=False))
    return Sample(relation, rate, seed, indices)


def predicate_mask(columns: Mapping[str, np.ndarray], n: int,
                   predicate: Predicate) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    for attr, r in predicate.ranges:
        col = columns[attr]
        if not math.isinf(r.lo):
            mask &= (col > r.lo) if r.lo_strict else (col >= r.lo)
        if not math.isinf(r.hi):
            mask &= (col < r.hi) if r.hi_strict else (col <= r.hi)
    for attr, values in predicate.in_lists:
        mask &= np.isin(columns[attr], values)
    return mask


def tree_mask(columns: Mapping[str, np.ndarray], n: int,
              node: BoolExpr | None) -> np.ndarray:
    """Mask for the raw-only path; handles disjunctive trees."""
    if node is None:
        return np.ones(n, dtype=bool)
    if isinstance(node, RangeAtom):
        return predicate_mask(columns, n, Predicate(((node.attr, node.range),)))
    if isinstance(node, InAtom):
        return np.isin(columns[node.attr], node.values)
    masks = [tree_mask(columns, n, c) for c in node.children]
    out = masks[0]
    for m in masks[1:]:
        out = (out & m) if isinstance(node, And) else (out | m)
    return out


@lru_cache(maxsize=256)
def _measure_expr(text: str):
    return parse_expr_text(text)


def measure_values(columns: Mapping[str, np.ndarray], g: AggKey) -> np.ndarray:
    """Evaluate an AVG key's measure expression row-wise (virtual column)."""
    if g.kind != "avg":
        raise ValueError("only AVG keys carry a measure expression")
    vals = eval_expr(_measure_expr(g.arg), columns)
    return np.asarray(vals, dtype=np.float64)


def evaluate_masked(columns: Mapping[str, np.ndarray], n: int,
                    mask: np.ndarray, g: AggKey,
                    exact: bool = False) -> tuple[float, float, int]:
    """(theta, beta, matched) for one internal aggregate over given rows."""
    m = int(mask.sum())
    if g.kind == "freq":
        theta = m / n
        beta = 0.0 if exact else math.sqrt(theta * (1.0 - theta) / n)
        return theta, beta, m
    if m == 0 or (m == 1 and not exact):
        raise EmptySelectionError(
            f"empty selection: {m} matching row(s) for AVG snippet"
        )
    vals = measure_values(columns, g)[mask]
    theta = float(vals.mean())
    if exact:
        beta = 0.0
    else:
        beta = float(vals.std(ddof=1)) / math.sqrt(m)
    return theta, beta, m


def _evaluate(columns: Mapping[str, np.ndarray], n: int,
              snippet: QuerySnippet, exact: bool) -> RawAnswer:
    mask = predicate_mask(columns, n, snippet.predicate)
    theta, beta, m = evaluate_masked(columns, n, mask, snippet.g, exact)
    return RawAnswer(snippet, theta, beta, m, n)


def estimate_snippet(sample: Sample, snippet: QuerySnippet) -> RawAnswer:
    """Raw answer from the sample, CLT error attached."""
    return _evaluate(sample.columns, sample.size, snippet, exact=False)


def exact_snippet(relation: Relation, snippet: QuerySnippet) -> RawAnswer:
    """Full-scan oracle answer; beta = 0 by definition."""
    return _evaluate(relation.columns, relation.row_count, snippet, exact=True)


def online_aggregate(relation: Relation, snippet: QuerySnippet,
                     batch_size: int, seed: int) -> Iterator[RawAnswer]:
    """Online aggregation: refine over a seeded random permutation.

    Emits ceil(rows / batch_size) answers; emission k covers the first
    k * batch_size permuted rows; the last one is the exact answer.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = relation.row_count
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cols = relation.take(perm)
    mask = predicate_mask(cols, n, snippet.predicate)
    emissions = math.ceil(n / batch_size)

    if snippet.g.kind == "freq":
        matched = np.cumsum(mask)
        for k in range(1, emissions):
            size = k * batch_size
            m = int(matched[size - 1])
            theta = m / size
            beta = math.sqrt(theta * (1.0 - theta) / size)
            yield RawAnswer(snippet, theta, beta, m, size)
        yield exact_snippet(relation, snippet)
        return

    vals = measure_values(cols, snippet.g)
    masked = np.where(mask, vals, 0.0)
    csum = np.cumsum(masked)
    csum2 = np.cumsum(np.where(mask, vals * vals, 0.0))
    matched = np.cumsum(mask)
    for k in range(1, emissions):
        size = k * batch_size
        m = int(matched[size - 1])
        if m < 2:
            raise EmptySelectionError(
                f"empty selection in online batch {k}: {m} matching row(s)"
            )
        total = csum[size - 1]
        mean = total / m
        # unbiased variance from running sums
        var = max((csum2[size - 1] - m * mean * mean) / (m - 1), 0.0)
        beta = math.sqrt(var / m)
        yield RawAnswer(snippet, float(mean), float(beta), m, size)
    yield exact_snippet(relation, snippet)


def group_values(columns: Mapping[str, np.ndarray], n: int,
                 predicate: Predicate | None, groupby: tuple[str, ...],
                 mask: np.ndarray | None = None) -> list[tuple]:
    """Distinct groupby tuples among rows matching the predicate, sorted.

    This is the AQP engine's grouped result: groups invisible in the
    scanned rows do not appear. A precomputed mask overrides the
    predicate (the disjunctive raw path has no Predicate form).
    """
    if not groupby:
        return [()]
    if mask is None:
        mask = predicate_mask(columns, n, predicate)
    picked = [columns[a][mask] for a in groupby]
    if picked and len(picked[0]) == 0:
        return []
    seen = {tuple(row[i] for row in picked) for i in range(len(picked[0]))}
    out = []
    for tup in sorted(seen):
        out.append(tuple(float(v) if isinstance(v, (np.floating, float)) else str(v)
                         for v in tup))
    return out
