"""Synthetic benchmarks: data with known correlation structure, range
workloads with controllable overlap, and the two-phase benchmark run
that measures what the model buys over raw sampling.

The generator draws a latent function on a regular grid from a zero-mean
Gaussian process with the same squared-exponential kernel the engine
fits, so the fitted lengths have a known target and kernel-predicted
covariances can be checked against redraws of the truth.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import exact_snippet
from .errors import ConfigError
from .frontend import AggKey
from .inference import confidence_multiplier
from .kernel import CorrelationParams
from .pipeline import EngineConfig, QueryEngine, SnippetOutcome
from .relation import Attribute, Relation, Schema

REPORT_COLUMNS = (
    "qid", "g", "theta_raw", "beta_raw", "theta_model", "beta_model",
    "accepted", "theta_hat", "beta_hat", "exact", "rel_err_raw",
    "rel_err_hat", "t_infer_us",
)

_MAX_GRID = 10_000
_MAX_ROWS = 1_000_000
_MAX_DIMS = 3


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator knobs; lengths/extents/grid are per dimension."""

    dims: int = 1
    extents: tuple[tuple[float, float], ...] = ((0.0, 100.0),)
    lengths: tuple[float, ...] = (10.0,)
    sigma2: float = 4.0
    noise: float = 1.0        # measurement-noise standard deviation
    offset: float = 10.0
    rows: int = 100_000
    grid: tuple[int, ...] = (500,)
    categories: int = 0       # > 0 adds a categorical "seg" column
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.dims <= _MAX_DIMS):
            raise ConfigError(f"dims must be 1..{_MAX_DIMS}, got {self.dims}")
        for name in ("extents", "lengths", "grid"):
            if len(getattr(self, name)) != self.dims:
                raise ConfigError(f"{name} must have {self.dims} entries")
        if not (1 <= self.rows <= _MAX_ROWS):
            raise ConfigError(f"rows must be 1..{_MAX_ROWS}, got {self.rows}")
        points = math.prod(self.grid)
        if points > _MAX_GRID:
            raise ConfigError(
                f"grid too large: {points} points exceeds {_MAX_GRID}")
        if any(g < 2 for g in self.grid):
            raise ConfigError("grid needs at least 2 points per dimension")
        if any(hi <= lo for lo, hi in self.extents):
            raise ConfigError("extents must have lo < hi")
        if any(l <= 0 for l in self.lengths):
            raise ConfigError("lengths must be positive")
        if self.sigma2 < 0 or self.noise < 0:
            raise ConfigError("sigma2 and noise must be non-negative")
        if self.categories < 0:
            raise ConfigError("categories must be >= 0")

    @property
    def dimension_names(self) -> tuple[str, ...]:
        return tuple(f"x{k + 1}" for k in range(self.dims))


@dataclass(frozen=True)
class GroundTruth:
    """What the generator knows and the learner has to recover."""

    lengths: tuple[float, ...]
    sigma2: float
    offset: float
    noise: float
    axes: tuple[np.ndarray, ...]    # grid coordinates per dimension
    points: np.ndarray              # (G, dims) flattened grid mesh
    nu: np.ndarray                  # latent value per grid point
    root: np.ndarray                # symmetric decomposition of the Gram

    def params(self, g: AggKey) -> CorrelationParams:
        """The generating kernel as engine-side correlation parameters."""
        names = tuple(f"x{k + 1}" for k in range(len(self.lengths)))
        return CorrelationParams.build(
            g, dict(zip(names, self.lengths)), self.sigma2, self.offset)

    def redraw(self, seed: int) -> np.ndarray:
        """An independent latent sample from the same process."""
        z = np.random.default_rng(seed).standard_normal(len(self.nu))
        return self.root @ z


@dataclass(frozen=True)
class SyntheticData:
    spec: SyntheticSpec
    relation: Relation
    truth: GroundTruth
    nearest: np.ndarray     # per row, the flat index of its grid point

    def redraw_measures(self, seed: int) -> np.ndarray:
        """The measure column under an independent draw of the latent
        process (and fresh noise), with the row positions kept fixed."""
        rng = np.random.default_rng(seed)
        nu = self.truth.root @ rng.standard_normal(len(self.truth.nu))
        return (nu[self.nearest] + self.spec.offset
                + rng.normal(0.0, self.spec.noise, len(self.nearest)))


def _gram_root(points: np.ndarray, lengths: Sequence[float],
               sigma2: float) -> np.ndarray:
    """Symmetric square root of the grid Gram matrix.

    Eigendecomposition instead of Cholesky: smooth kernels make the Gram
    numerically singular, so negative eigenvalue dust is clipped to zero.
    """
    gram = np.ones((len(points), len(points)))
    for k, l in enumerate(lengths):
        diff = points[:, k, None] - points[None, :, k]
        gram *= np.exp(-(diff / l) ** 2)
    gram *= sigma2
    w, v = np.linalg.eigh(gram)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _nearest_flat(values: np.ndarray, axes: Sequence[np.ndarray],
                  shape: Sequence[int]) -> np.ndarray:
    idx = []
    for k, axis in enumerate(axes):
        step = axis[1] - axis[0]
        j = np.rint((values[:, k] - axis[0]) / step).astype(np.intp)
        idx.append(np.clip(j, 0, len(axis) - 1))
    return np.ravel_multi_index(idx, shape)


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Rows whose measure follows a grid-sampled Gaussian process.

    Dimension values are uniform over the extents; the measure is the
    latent value at the nearest grid point plus offset plus noise.
    """
    rng = np.random.default_rng(spec.seed)
    axes = tuple(np.linspace(lo, hi, g)
                 for (lo, hi), g in zip(spec.extents, spec.grid))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    root = _gram_root(points, spec.lengths, spec.sigma2)
    nu = root @ rng.standard_normal(len(points))

    columns: dict[str, np.ndarray] = {}
    dims = np.empty((spec.rows, spec.dims))
    for k, (lo, hi) in enumerate(spec.extents):
        dims[:, k] = rng.uniform(lo, hi, spec.rows)
        columns[f"x{k + 1}"] = dims[:, k]
    flat = _nearest_flat(dims, axes, spec.grid)
    columns["y"] = (nu[flat] + spec.offset
                    + rng.normal(0.0, spec.noise, spec.rows))

    attrs = [Attribute(f"x{k + 1}", "dimension", "numeric")
             for k in range(spec.dims)]
    if spec.categories > 0:
        labels = np.array([f"s{i}" for i in range(spec.categories)])
        columns["seg"] = labels[rng.integers(0, spec.categories, spec.rows)]
        attrs.append(Attribute("seg", "dimension", "categorical"))
    attrs.append(Attribute("y", "measure", "numeric"))

    relation = Relation(Schema(tuple(attrs)), columns)
    truth = GroundTruth(spec.lengths, spec.sigma2, spec.offset, spec.noise,
                        axes, points, nu, root)
    return SyntheticData(spec, relation, truth, flat)


# ---------------------------------------------------------------------------
# workload generation


@dataclass(frozen=True)
class WorkloadSpec:
    """Range-query workload over one anchor dimension."""

    count: int = 200
    width: tuple[float, float] = (5.0, 20.0)   # uniform range-width bounds
    overlap: float = 0.5       # fraction forced to intersect a predecessor
    groupby_fraction: float = 0.0
    aggregates: tuple[str, ...] = ("avg",)
    attr: str = "x1"
    measure: str = "y"
    groupby_attr: str = "seg"
    table: str = "t"
    extent: tuple[float, float] = (0.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if not (0.0 < self.width[0] <= self.width[1]):
            raise ConfigError(f"bad width bounds {self.width}")
        for name in ("overlap", "groupby_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not self.aggregates or any(
                a not in ("avg", "sum", "count") for a in self.aggregates):
            raise ConfigError(f"bad aggregate mix {self.aggregates}")
        lo, hi = self.extent
        if self.width[1] >= hi - lo:
            raise ConfigError("width bound exceeds the extent")


def gen_workload(spec: WorkloadSpec) -> list[str]:
    """Deterministic SQL texts; overlap anchors ranges onto predecessors."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.extent
    intervals: list[tuple[float, float]] = []
    queries: list[str] = []
    for i in range(spec.count):
        width = rng.uniform(*spec.width)
        if intervals and rng.random() < spec.overlap:
            prev_lo, prev_hi = intervals[rng.integers(0, len(intervals))]
            # any start in (prev_lo - width, prev_hi) intersects [prev_lo, prev_hi]
            start = rng.uniform(max(lo, prev_lo - width),
                                min(prev_hi, hi - width))
        else:
            start = rng.uniform(lo, hi - width)
        a, b = start, start + width
        intervals.append((a, b))
        fn = spec.aggregates[rng.integers(0, len(spec.aggregates))]
        select = "COUNT(*)" if fn == "count" else f"{fn.upper()}({spec.measure})"
        sql = (f"SELECT {select} FROM {spec.table} "
               f"WHERE {spec.attr} BETWEEN {a:.6f} AND {b:.6f}")
        if rng.random() < spec.groupby_fraction:
            sql += f" GROUP BY {spec.groupby_attr}"
        queries.append(sql)
    return queries


# ---------------------------------------------------------------------------
# benchmark run


@dataclass(frozen=True)
class BenchConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    use_model: bool = True     # False: identity pipeline, raw answers only


@dataclass(frozen=True)
class RowRecord:
    """One answered snippet in phase 2."""

    qid: int
    g: str
    theta_raw: float
    beta_raw: float
    theta_model: float | None
    beta_model: float | None
    accepted: bool
    model_used: bool
    theta_hat: float
    beta_hat: float
    exact: float
    rel_err_raw: float
    rel_err_hat: float
    abs_err_raw: float
    abs_err_hat: float
    t_infer_us: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[RowRecord, ...]
    queries: int
    reduction: float
    violation_rate: float
    raw_violation_rate: float
    dominance_violations: int
    model_used_rate: float
    accepted_rate: float
    mean_rel_err_raw: float
    mean_rel_err_hat: float
    mean_abs_err_raw: float
    mean_abs_err_hat: float
    mean_infer_us: float
    confidence: float


def _rel_err(value: float, exact: float) -> float:
    err = abs(value - exact)
    return err / abs(exact) if exact != 0.0 else err


def _row_from_outcome(qid: int, outcome: SnippetOutcome,
                      exact: float) -> RowRecord:
    final = outcome.final
    return RowRecord(
        qid=qid,
        g=str(outcome.raw.snippet.g),
        theta_raw=outcome.raw.theta,
        beta_raw=outcome.raw.beta,
        theta_model=None if outcome.model is None else outcome.model.theta_model,
        beta_model=None if outcome.model is None else outcome.model.beta_model,
        accepted=outcome.accepted,
        model_used=final.model_used,
        theta_hat=final.theta_hat,
        beta_hat=final.beta_hat,
        exact=exact,
        rel_err_raw=_rel_err(outcome.raw.theta, exact),
        rel_err_hat=_rel_err(final.theta_hat, exact),
        abs_err_raw=abs(outcome.raw.theta - exact),
        abs_err_hat=abs(final.theta_hat - exact),
        t_infer_us=outcome.t_infer_us,
    )


def summarize(rows: Sequence[RowRecord], queries: int,
              confidence: float = 0.95) -> MetricsReport:
    """Aggregate metrics over answered snippet rows."""
    if not rows:
        return MetricsReport(tuple(), queries, 0.0, 0.0, 0.0, 0, 0.0, 0.0,
                             0.0, 0.0, 0.0, 0.0, 0.0, confidence)
    alpha = confidence_multiplier(confidence)
    beta_raw = np.array([r.beta_raw for r in rows])
    beta_hat = np.array([r.beta_hat for r in rows])
    mean_raw = float(beta_raw.mean())
    reduction = 1.0 - float(beta_hat.mean()) / mean_raw if mean_raw > 0 else 0.0
    violations = sum(r.abs_err_hat > alpha * r.beta_hat for r in rows)
    raw_violations = sum(r.abs_err_raw > alpha * r.beta_raw for r in rows)
    dominance = sum(r.beta_hat > r.beta_raw for r in rows)
    used = sum(r.model_used for r in rows)
    n = len(rows)
    return MetricsReport(
        rows=tuple(rows),
        queries=queries,
        reduction=reduction,
        violation_rate=violations / n,
        raw_violation_rate=raw_violations / n,
        dominance_violations=dominance,
        model_used_rate=used / n,
        accepted_rate=sum(r.accepted for r in rows) / n,
        mean_rel_err_raw=float(np.mean([r.rel_err_raw for r in rows])),
        mean_rel_err_hat=float(np.mean([r.rel_err_hat for r in rows])),
        mean_abs_err_raw=float(np.mean([r.abs_err_raw for r in rows])),
        mean_abs_err_hat=float(np.mean([r.abs_err_hat for r in rows])),
        mean_infer_us=float(np.mean([r.t_infer_us for r in rows])),
        confidence=confidence,
    )


def run_bench(relation: Relation, workload: Sequence[str],
              config: BenchConfig | None = None,
              engine: QueryEngine | None = None) -> MetricsReport:
    """Two-phase benchmark over a prepared workload.

    Phase 1 answers the first half raw, feeding the synopsis; then one
    offline fit; phase 2 answers the rest through the full pipeline.
    Report rows cover phase 2 only, one per answered snippet, with the
    exact answer from a full scan next to each.
    """
    config = config if config is not None else BenchConfig()
    if engine is None:
        engine = QueryEngine(relation, config.engine)
    split = len(workload) // 2
    for sql in workload[:split]:
        engine.answer_query(sql, use_model=False)
    if config.use_model:
        engine.train()
    rows: list[RowRecord] = []
    for qid in range(split, len(workload)):
        result = engine.answer_query(workload[qid],
                                     use_model=config.use_model)
        for outcome in result.outcomes:
            exact = exact_snippet(engine.relation, outcome.raw.snippet).theta
            rows.append(_row_from_outcome(qid, outcome, exact))
    return summarize(rows, queries=len(workload) - split,
                     confidence=config.engine.confidence)


# ---------------------------------------------------------------------------
# report emission


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: MetricsReport) -> str:
    """The per-snippet rows as CSV text with the documented columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in report.rows:
        writer.writerow([_csv_value(getattr(r, col))
                         for col in REPORT_COLUMNS])
    return buf.getvalue()


def report_summary(report: MetricsReport) -> dict:
    """Aggregate metrics as a JSON-ready dict."""
    return {
        "queries": report.queries,
        "snippets": len(report.rows),
        "reduction": report.reduction,
        "violation_rate": report.violation_rate,
        "raw_violation_rate": report.raw_violation_rate,
        "dominance_violations": report.dominance_violations,
        "model_used_rate": report.model_used_rate,
        "accepted_rate": report.accepted_rate,
        "mean_rel_err_raw": report.mean_rel_err_raw,
        "mean_rel_err_hat": report.mean_rel_err_hat,
        "mean_abs_err_raw": report.mean_abs_err_raw,
        "mean_abs_err_hat": report.mean_abs_err_hat,
        "mean_infer_us": report.mean_infer_us,
        "confidence": report.confidence,
    }


def emit_report(report: MetricsReport, csv_path, json_path=None) -> None:
    """Write the CSV rows and, optionally, the JSON summary."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_csv(report))
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report_summary(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
