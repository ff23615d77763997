"""End-to-end query flow: parse, sample, estimate, improve, remember.

QueryEngine binds one relation, one synopsis, and one config into the
full loop. Per query: decompose into snippets, answer each from a fresh
sample, run trained-model inference where available, validate, compose
the user-facing aggregates, and insert the raw answers back into the
synopsis so future training sees them.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .append import adjust_synopsis
from .engine import (
    RawAnswer,
    Sample,
    build_sample,
    estimate_snippet,
    evaluate_masked,
    group_values,
    online_aggregate,
    tree_mask,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateSynopsisError,
    EmptySelectionError,
    UnsupportedQueryError,
)
from .frontend import (
    AggKey,
    AggregateSpec,
    GroupPlan,
    QuerySnippet,
    RawQuery,
    SupportedQuery,
    Unsupported,
    compose_answer,
    internal_keys,
    parse,
    plan_groups,
)
from .inference import ModelAnswer, confidence_multiplier, infer, prior_mean
from .kernel import build_sigma, build_system
from .learner import FitConfig, fit
from .relation import Relation, append_rows, catalog
from .synopsis import Synopsis, SynopsisEntry, TrainedModel
from .validator import (
    REASON_DEGENERATE,
    REASON_NONE,
    REASON_UNTRAINED,
    VALIDATION_CHEBYSHEV,
    VALIDATION_CLT,
    ImprovedAnswer,
    finalize,
    passthrough,
    validate,
)

# cell-level reason when a group's sample rows cannot support an estimate
REASON_EMPTY = "empty_selection"

_CONFIG_KEYS = {
    "n_max", "c_g", "delta_v", "confidence", "sample_rate", "batch_size",
    "jitter", "seed", "validation", "n_min", "restarts", "timings",
}


@dataclass(frozen=True)
class EngineConfig:
    """Tunable knobs, loadable from a JSON config file."""

    n_max: int = 1000          # group cap: first n_max groups get the model
    c_g: int = 2000            # synopsis entries kept per aggregate key
    delta_v: float = 0.99      # likely-region mass for validation
    confidence: float = 0.95   # reported-interval mass
    sample_rate: float = 0.1
    batch_size: int = 10_000   # online-aggregation refinement step
    jitter: float = 1e-8       # starting rung of the covariance jitter
    seed: int = 0
    validation: str = VALIDATION_CLT
    n_min: int = 10            # entries required before fitting
    restarts: int = 3
    timings: bool = True       # False zeroes t_infer_us for stable output

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")
        if self.c_g < 1:
            raise ConfigError(f"c_g must be >= 1, got {self.c_g}")
        for name in ("delta_v", "confidence"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not (0.0 < self.sample_rate <= 1.0):
            raise ConfigError(
                f"sample_rate must lie in (0, 1], got {self.sample_rate}")
        if self.batch_size < 1:
            raise ConfigError(
                f"batch_size must be >= 1, got {self.batch_size}")
        if self.jitter <= 0.0:
            raise ConfigError(f"jitter must be positive, got {self.jitter}")
        if self.validation not in (VALIDATION_CLT, VALIDATION_CHEBYSHEV):
            raise ConfigError(
                f"validation must be {VALIDATION_CLT!r} or "
                f"{VALIDATION_CHEBYSHEV!r}, got {self.validation!r}")
        if self.n_min < 2:
            raise ConfigError(f"n_min must be >= 2, got {self.n_min}")
        if self.restarts < 0:
            raise ConfigError(f"restarts must be >= 0, got {self.restarts}")

    @classmethod
    def from_json(cls, text: str) -> "EngineConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config JSON must be an object")
        unknown = set(obj) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_json(p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SnippetOutcome:
    """One snippet's trip through the improvement path."""

    raw: RawAnswer
    model: ModelAnswer | None
    final: ImprovedAnswer
    accepted: bool
    t_infer_us: float


@dataclass(frozen=True)
class AggregateCell:
    """One user-facing aggregate value within a result row.

    Values are None when the group's sample rows cannot support the
    estimate (reason "empty_selection").
    """

    aggregate: str
    value: float | None
    error: float | None
    ci: tuple[float, float] | None
    model_used: bool
    reason: str
    raw_value: float | None
    raw_error: float | None


@dataclass(frozen=True)
class ResultRow:
    group: tuple
    cells: tuple[AggregateCell, ...]


@dataclass(frozen=True)
class QueryResult:
    sql: str
    table: str
    groupby: tuple[str, ...]
    rows: tuple[ResultRow, ...]
    supported: bool
    reason: str = REASON_NONE
    rows_scanned: int = 0
    # per-snippet diagnostics in plan order; benchmark reports read these
    outcomes: tuple[SnippetOutcome, ...] = ()


class QueryEngine:
    """One relation + one synopsis + one config, bound into the loop."""

    def __init__(self, relation: Relation, config: EngineConfig | None = None,
                 synopsis: Synopsis | None = None):
        self.config = config if config is not None else EngineConfig()
        self.relation = relation
        self.synopsis = (synopsis if synopsis is not None
                         else Synopsis(cap=self.config.c_g))
        self._catalog = catalog(relation)
        self._queries_issued = 0

    @property
    def catalog(self):
        return self._catalog

    # -- sampling --------------------------------------------------------

    def _next_seed(self) -> int:
        seq = np.random.SeedSequence((self.config.seed,
                                      self._queries_issued))
        self._queries_issued += 1
        return int(seq.generate_state(1)[0])

    def fresh_sample(self) -> Sample:
        """A new uniform sample; each query draws its own."""
        return build_sample(self.relation, self.config.sample_rate,
                            self._next_seed())

    # -- per-snippet improvement ------------------------------------------

    def _remember(self, raw: RawAnswer) -> None:
        self.synopsis.insert(SynopsisEntry(
            snippet=raw.snippet, theta=raw.theta, beta=raw.beta,
            last_used=0, data_version=self.relation.version))

    def improve_snippet(self, raw: RawAnswer,
                        insert: bool = True) -> SnippetOutcome:
        """Run one raw answer through inference and validation.

        Exact answers, untrained keys, and degenerate systems fall back
        to the raw answer with the matching reason. The raw answer is
        inserted into the synopsis regardless of the model outcome.
        """
        cfg = self.config
        g = raw.snippet.g
        model = None
        accepted = False
        start = time.perf_counter()
        trained = self.synopsis.trained.get(g)
        if raw.beta == 0.0:
            final = passthrough(g, raw, cfg.confidence, REASON_NONE)
        elif trained is None:
            final = passthrough(g, raw, cfg.confidence, REASON_UNTRAINED)
        else:
            try:
                system = build_system(trained.entries, raw.snippet,
                                      trained.params, trained.catalog,
                                      precomputed=trained.precomputed)
                model = infer(raw, system)
            except (DegenerateSynopsisError, DataError):
                final = passthrough(g, raw, cfg.confidence, REASON_DEGENERATE)
            else:
                accepted = validate(model, raw, cfg.delta_v, cfg.validation)
                final = finalize(g, model, raw, accepted, cfg.confidence)
                self.synopsis.touch(g, [e.snippet for e in trained.entries])
        elapsed = (time.perf_counter() - start) * 1e6
        if insert:
            self._remember(raw)
        return SnippetOutcome(raw, model, final, accepted,
                              elapsed if cfg.timings else 0.0)

    def _raw_outcome(self, raw: RawAnswer, insert: bool = True) -> SnippetOutcome:
        if insert:
            self._remember(raw)
        final = passthrough(raw.snippet.g, raw, self.config.confidence)
        return SnippetOutcome(raw, None, final, False, 0.0)

    # -- aggregate composition --------------------------------------------

    def _cell_interval(self, fn: str, value: float,
                       error: float) -> tuple[float, float]:
        half = confidence_multiplier(self.config.confidence) * error
        lo, hi = value - half, value + half
        if fn == "count":
            lo = max(lo, 0.0)
        return lo, hi

    def _compose_cell(self, spec: AggregateSpec,
                      outcomes: Mapping[AggKey, SnippetOutcome]) -> AggregateCell:
        keys = internal_keys(spec)
        hat = {g: (outcomes[g].final.theta_hat, outcomes[g].final.beta_hat)
               for g in keys}
        raw = {g: (outcomes[g].raw.theta, outcomes[g].raw.beta)
               for g in keys}
        cardinality = self.relation.row_count
        value, error = compose_answer(hat, spec, cardinality)
        raw_value, raw_error = compose_answer(raw, spec, cardinality)
        model_used = any(outcomes[g].final.model_used for g in keys)
        reason = next((outcomes[g].final.rejection_reason for g in keys
                       if outcomes[g].final.rejection_reason != REASON_NONE),
                      REASON_NONE)
        return AggregateCell(
            aggregate=spec.text,
            value=value,
            error=error,
            ci=self._cell_interval(spec.fn, value, error),
            model_used=model_used,
            reason=reason,
            raw_value=raw_value,
            raw_error=raw_error,
        )

    @staticmethod
    def _empty_row(group: tuple,
                   aggregates: Sequence[AggregateSpec]) -> ResultRow:
        cells = tuple(
            AggregateCell(spec.text, None, None, None, False, REASON_EMPTY,
                          None, None)
            for spec in aggregates)
        return ResultRow(group, cells)

    # -- one-shot queries --------------------------------------------------

    def answer_query(self, sql: str, use_model: bool = True) -> QueryResult:
        """Answer one query from a fresh sample.

        use_model=False runs the raw pipeline only; the sample draw is
        identical, so raw values match the model path's raw_* fields.
        """
        parsed = parse(sql, self.relation.schema)
        if isinstance(parsed, Unsupported):
            return self._answer_unsupported(parsed, sql)
        query = parsed
        sample = self.fresh_sample()
        values = group_values(sample.columns, sample.size, query.predicate,
                              query.groupby)
        plans = plan_groups(query, values, self.config.n_max,
                            self.relation.schema)
        rows = []
        collected: list[SnippetOutcome] = []
        for plan in plans:
            row, outcomes = self._answer_plan(query, plan, sample, use_model)
            rows.append(row)
            collected.extend(outcomes)
        return QueryResult(sql, query.table, query.groupby, tuple(rows),
                           supported=True, rows_scanned=sample.size,
                           outcomes=tuple(collected))

    def _answer_plan(self, query: SupportedQuery, plan: GroupPlan,
                     sample: Sample, use_model: bool,
                     ) -> tuple[ResultRow, list[SnippetOutcome]]:
        outcomes: dict[AggKey, SnippetOutcome] = {}
        for snippet in plan.snippets():
            try:
                raw = estimate_snippet(sample, snippet)
            except EmptySelectionError:
                return self._empty_row(plan.values, query.aggregates), []
            if use_model and plan.improved:
                outcomes[snippet.g] = self.improve_snippet(raw)
            else:
                outcomes[snippet.g] = self._raw_outcome(raw)
        cells = tuple(self._compose_cell(spec, outcomes)
                      for spec in query.aggregates)
        return ResultRow(plan.values, cells), list(outcomes.values())

    def _answer_unsupported(self, parsed: Unsupported,
                            sql: str) -> QueryResult:
        """Raw-only evaluation of a query outside the supported subset."""
        if parsed.raw is None:
            raise UnsupportedQueryError(parsed.reason)
        rq = parsed.raw
        sample = self.fresh_sample()
        n = sample.size
        where = tree_mask(sample.columns, n, rq.where)
        values = group_values(sample.columns, n, None, rq.groupby, mask=where)
        rows = []
        for group in values:
            mask = where
            for attr, value in zip(rq.groupby, group):
                mask = mask & (sample.columns[attr] == value)
            rows.append(self._raw_tree_row(rq, sample, mask, group))
        return QueryResult(sql, rq.table, rq.groupby, tuple(rows),
                           supported=False, reason=parsed.reason,
                           rows_scanned=n)

    def _raw_tree_row(self, rq: RawQuery, sample: Sample, mask: np.ndarray,
                      group: tuple) -> ResultRow:
        estimates: dict[AggKey, tuple[float, float]] = {}
        for spec in rq.aggregates:
            for g in internal_keys(spec):
                if g in estimates:
                    continue
                try:
                    theta, beta, _ = evaluate_masked(sample.columns,
                                                     sample.size, mask, g)
                except EmptySelectionError:
                    return self._empty_row(group, rq.aggregates)
                estimates[g] = (theta, beta)
        cells = []
        for spec in rq.aggregates:
            value, error = compose_answer(estimates, spec,
                                          self.relation.row_count)
            cells.append(AggregateCell(
                aggregate=spec.text,
                value=value,
                error=error,
                ci=self._cell_interval(spec.fn, value, error),
                model_used=False,
                reason="unsupported",
                raw_value=value,
                raw_error=error,
            ))
        return ResultRow(group, tuple(cells))

    # -- online aggregation -------------------------------------------------

    def answer_online(self, sql: str, batch_size: int | None = None,
                      use_model: bool = True) -> Iterator[QueryResult]:
        """Stream refinements: one QueryResult per batch of scanned rows.

        Every refinement runs through the model; only the final (exact)
        answer is inserted into the synopsis. GROUP BY is not available
        in this mode.
        """
        parsed = parse(sql, self.relation.schema)
        if isinstance(parsed, Unsupported):
            raise UnsupportedQueryError(parsed.reason)
        if parsed.groupby:
            raise UnsupportedQueryError(
                "online aggregation does not support GROUP BY")
        bs = self.config.batch_size if batch_size is None else batch_size
        keys: list[AggKey] = []
        for spec in parsed.aggregates:
            for g in internal_keys(spec):
                if g not in keys:
                    keys.append(g)
        seed = self._next_seed()
        # one shared seed: every stream scans the same row permutation
        streams = [online_aggregate(self.relation,
                                    QuerySnippet(g, parsed.predicate),
                                    bs, seed)
                   for g in keys]
        for emission in zip(*streams):
            raws = dict(zip(keys, emission))
            outcomes = {}
            for g, raw in raws.items():
                if use_model:
                    outcomes[g] = self.improve_snippet(raw, insert=raw.exact)
                else:
                    outcomes[g] = self._raw_outcome(raw, insert=raw.exact)
            cells = tuple(self._compose_cell(spec, outcomes)
                          for spec in parsed.aggregates)
            scanned = next(iter(raws.values())).sample_size
            yield QueryResult(sql, parsed.table, (),
                              (ResultRow((), cells),),
                              supported=True, rows_scanned=scanned,
                              outcomes=tuple(outcomes.values()))

    # -- training ------------------------------------------------------------

    def train(self, keys: Sequence[AggKey] | None = None,
              restarts: int | None = None,
              seed: int | None = None) -> dict[str, str]:
        """Fit correlation parameters per aggregate key and snapshot the
        covariance system for O(n^2) per-query inference.

        Returns a per-key status report. Keys below n_min stay (or
        become) untrained.
        """
        cfg = self.config
        fit_cfg = FitConfig(
            n_min=cfg.n_min,
            restarts=cfg.restarts if restarts is None else restarts,
            seed=cfg.seed if seed is None else seed,
        )
        targets = list(keys) if keys is not None else self.synopsis.keys()
        report: dict[str, str] = {}
        for g in targets:
            entries = tuple(replace(e) for e in self.synopsis.entries_for(g))
            if not entries:
                self.synopsis.trained.pop(g, None)
                report[str(g)] = "empty"
                continue
            params = fit(entries, self._catalog, fit_cfg)
            if params is None:
                self.synopsis.trained.pop(g, None)
                report[str(g)] = (f"untrained: {len(entries)} entries, "
                                  f"n_min={fit_cfg.n_min}")
                continue
            if self._snapshot(g, entries, params):
                report[str(g)] = f"trained: {len(entries)} entries"
            else:
                report[str(g)] = "degenerate"
        return report

    def _snapshot(self, g: AggKey, entries: tuple[SynopsisEntry, ...],
                  params) -> bool:
        try:
            sigma, inv, eps = build_sigma(entries, params, self._catalog,
                                          jitter0=self.config.jitter)
        except DegenerateSynopsisError:
            self.synopsis.trained.pop(g, None)
            return False
        self.synopsis.trained[g] = TrainedModel(
            g=g, params=params, entries=entries, sigma_n=sigma,
            sigma_n_inv=inv, jitter=eps, catalog=self._catalog,
            data_version=self.relation.version)
        return True

    # -- data append -----------------------------------------------------------

    def append(self, batch: Relation, adjust: bool = True) -> dict[str, int]:
        """Append rows and (by default) run the synopsis adjustment.

        Adjustment shifts stored plain-attribute AVG answers, evicts
        stale FREQ and derived-expression entries, then rebuilds each
        trained model from the adjusted entries, keeping its fitted
        kernel lengths but re-estimating the prior mean. adjust=False
        leaves the synopsis and models stale (bounds degrade as the
        data drifts; training later resyncs them).
        """
        merged, (n_old, n_new) = append_rows(self.relation, batch)
        report = {"rows_before": n_old, "rows_appended": n_new,
                  "version": merged.version, "adjusted": 0, "evicted": 0,
                  "models_rebuilt": 0, "models_dropped": 0}
        if n_new == 0:
            return report
        old = self.relation
        self.relation = merged
        self._catalog = catalog(merged)
        if not adjust:
            return report
        counts = adjust_synopsis(self.synopsis, old, batch, merged.version,
                                 self.config.sample_rate, self.config.seed)
        report.update(counts)
        for g in list(self.synopsis.trained):
            if self._rebuild_model(g):
                report["models_rebuilt"] += 1
            else:
                report["models_dropped"] += 1
        return report

    def _rebuild_model(self, g: AggKey) -> bool:
        """Refresh a trained model after adjustment without a refit."""
        trained = self.synopsis.trained.get(g)
        entries = tuple(replace(e) for e in self.synopsis.entries_for(g))
        if trained is None or len(entries) < 2:
            self.synopsis.trained.pop(g, None)
            return False
        params = replace(trained.params,
                         mu=prior_mean(entries, g, self._catalog))
        return self._snapshot(g, entries, params)
