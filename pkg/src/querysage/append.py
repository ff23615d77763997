"""Keeping the synopsis usable after rows are appended.

An append shifts every stored AVG answer by an unknown amount. Sampling
both the old rows and the appended batch gives a mean-shift estimate
per measure attribute; each stale AVG entry is then shifted by the
append's weight and its error widened by the estimate's uncertainty:

    w       = n_new / (n_old + n_new)
    theta'  = theta + w * mu_k
    beta'^2 = beta^2 + (w * eta_k)^2

FREQ answers and derived-expression AVG answers have no such shift
rule, so their stale entries are evicted instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .engine import build_sample
from .errors import AppendError
from .frontend import AggKey
from .relation import Relation
from .synopsis import Synopsis, SynopsisEntry


@dataclass(frozen=True)
class ShiftEstimate:
    attribute: str
    mu_k: float    # estimated mean shift introduced by the append
    eta2_k: float  # sampling variance of that estimate
    n_old: int
    n_new: int

    @property
    def weight(self) -> float:
        total = self.n_old + self.n_new
        return self.n_new / total if total else 0.0


def estimate_shift(old_relation: Relation, appended_rows: Relation,
                   attribute: str, sample_rate: float,
                   seed: int) -> ShiftEstimate:
    """Mean shift of one measure attribute, from samples of both sides."""
    if appended_rows.row_count == 0:
        raise AppendError("appended batch is empty")
    rng = np.random.default_rng(seed)
    seed_old, seed_new = (int(s) for s in rng.integers(2 ** 31, size=2))
    old_vals = build_sample(old_relation, sample_rate,
                            seed_old).columns[attribute]
    new_vals = build_sample(appended_rows, sample_rate,
                            seed_new).columns[attribute]
    m_old, m_new = len(old_vals), len(new_vals)
    if m_old < 2 or m_new < 2:
        raise AppendError(
            f"shift estimate needs >= 2 sampled rows per side, got "
            f"{m_old} old and {m_new} new")
    mu_k = float(new_vals.mean() - old_vals.mean())
    eta2_k = float(new_vals.var(ddof=1) / m_new
                   + old_vals.var(ddof=1) / m_old)
    return ShiftEstimate(attribute, mu_k, eta2_k,
                         old_relation.row_count, appended_rows.row_count)


def adjust_entry(entry: SynopsisEntry, shift: ShiftEstimate,
                 new_version: int) -> SynopsisEntry:
    """Shifted-and-widened copy of one stale AVG entry."""
    g = entry.snippet.g
    if g.kind != "avg" or g.arg != shift.attribute:
        raise AppendError(
            f"shift on {shift.attribute!r} cannot adjust aggregate {g}")
    if entry.data_version >= new_version:
        raise AppendError(
            f"entry at data version {entry.data_version} does not predate "
            f"append version {new_version}")
    w = shift.weight
    return SynopsisEntry(
        snippet=entry.snippet,
        theta=entry.theta + w * shift.mu_k,
        beta=sqrt(entry.beta ** 2 + (w ** 2) * shift.eta2_k),
        last_used=entry.last_used,
        data_version=new_version,
    )


def handle_freq_on_append(synopsis: Synopsis, new_version: int) -> int:
    """Evict FREQ entries that predate the append; returns the count."""
    return synopsis.remove_where(
        AggKey.freq(), lambda e: e.data_version < new_version)


def adjust_synopsis(synopsis: Synopsis, old_relation: Relation,
                    batch: Relation, new_version: int, sample_rate: float,
                    seed: int) -> dict[str, int]:
    """Apply the append to every synopsis key.

    Plain-attribute AVG entries are shifted in place; FREQ entries and
    derived-expression AVG entries predating the append are evicted.
    Returns counts: {"adjusted": ..., "evicted": ...}.
    """
    measure_names = {a.name for a in old_relation.schema.measures}
    shifts: dict[str, ShiftEstimate] = {}
    adjusted = 0
    evicted = handle_freq_on_append(synopsis, new_version)
    for g in synopsis.keys():
        if g.kind != "avg":
            continue
        if g.arg not in measure_names:
            evicted += synopsis.remove_where(
                g, lambda e: e.data_version < new_version)
            continue
        if g.arg not in shifts:
            shifts[g.arg] = estimate_shift(old_relation, batch, g.arg,
                                           sample_rate, seed)
        shift = shifts[g.arg]
        for live in synopsis.entries_for(g):
            if live.data_version >= new_version:
                continue
            fresh = adjust_entry(live, shift, new_version)
            live.theta = fresh.theta
            live.beta = fresh.beta
            live.data_version = fresh.data_version
            adjusted += 1
    return {"adjusted": adjusted, "evicted": evicted}
