"""Command-line surface: load data, sample, query, train, append, bench.

Answers are emitted as JSON lines (output schema v1): every line is an
independent object with the keys

    group       object, only on GROUP BY results
    aggregate   the SELECT item, e.g. "AVG(sales)"
    value       final answer (null when the selection is empty)
    error       one-standard-deviation expected error of value
    ci          [lo, hi] interval at the configured confidence
    model_used  whether the learned model produced value
    raw_value   the sampling-only estimate
    raw_error   its expected error
    reason      present when the model was bypassed (e.g. "unsupported")
    rows_scanned  online mode only: rows covered so far

Exit codes: 0 success, 1 usage error, 2 data error, 3 unsupported query
(the raw answer is still printed when one can be computed).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import synopsis as synopsis_io
from .engine import build_sample
from .errors import (
    ConfigError,
    DataError,
    ParseError,
    QuerySageError,
    UnsupportedQueryError,
)
from .frontend import SupportedQuery, parse
from .harness import (
    BenchConfig,
    SyntheticSpec,
    WorkloadSpec,
    emit_report,
    gen_synthetic,
    gen_workload,
    report_summary,
    run_bench,
)
from .pipeline import EngineConfig, QueryEngine, QueryResult
from .relation import Relation, Schema, append_rows, load_csv, write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UNSUPPORTED = 3

_BUNDLE_TAG = "querysage-relation-v1"


def _load_or_new_synopsis(path: str | Path) -> synopsis_io.Synopsis:
    """Open an existing synopsis, or start a fresh one for a new file."""
    if Path(path).exists():
        return synopsis_io.load(path)
    return synopsis_io.Synopsis()


# ---------------------------------------------------------------------------
# relation bundles

def save_relation(relation: Relation, path: str | Path) -> None:
    """Persist a relation as a directory: schema, data, version."""
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    (p / "schema.json").write_text(relation.schema.to_json() + "\n",
                                   encoding="utf-8")
    write_csv(relation, p / "data.csv")
    meta = {"format": _BUNDLE_TAG, "version": relation.version,
            "rows": relation.row_count}
    (p / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n",
                                 encoding="utf-8")


def load_relation(path: str | Path) -> Relation:
    p = Path(path)
    meta_path = p / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{p}: not a relation bundle (missing meta.json)")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_path}: corrupt metadata: {exc}") from exc
    if meta.get("format") != _BUNDLE_TAG:
        raise DataError(f"{p}: unknown bundle format {meta.get('format')!r}")
    schema = Schema.from_file(p / "schema.json")
    loaded = load_csv(p / "data.csv", schema)
    return Relation(schema, loaded.columns, version=int(meta["version"]))


# ---------------------------------------------------------------------------
# output shaping

def _cell_dict(groupby, group, cell, rows_scanned=None) -> dict:
    obj: dict = {}
    if groupby:
        obj["group"] = {attr: value for attr, value in zip(groupby, group)}
    obj["aggregate"] = cell.aggregate
    obj["value"] = cell.value
    obj["error"] = cell.error
    obj["ci"] = None if cell.ci is None else [cell.ci[0], cell.ci[1]]
    obj["model_used"] = cell.model_used
    obj["raw_value"] = cell.raw_value
    obj["raw_error"] = cell.raw_error
    if cell.reason != "none":
        obj["reason"] = cell.reason
    if rows_scanned is not None:
        obj["rows_scanned"] = rows_scanned
    return obj


def _print_result(result: QueryResult, rows_scanned=None) -> None:
    for row in result.rows:
        for cell in row.cells:
            print(json.dumps(_cell_dict(result.groupby, row.group, cell,
                                        rows_scanned)))


def _print_unanswerable(reason: str) -> None:
    obj = {"aggregate": None, "value": None, "error": None, "ci": None,
           "model_used": False, "raw_value": None, "raw_error": None,
           "reason": reason}
    print(json.dumps(obj))


# ---------------------------------------------------------------------------
# subcommands

def _engine_config(args) -> EngineConfig:
    config = (EngineConfig.from_file(args.config)
              if getattr(args, "config", None) else EngineConfig())
    if getattr(args, "confidence", None) is not None:
        config = replace(config, confidence=args.confidence)
    return config


def cmd_load(args) -> int:
    schema = Schema.from_file(args.schema)
    relation = load_csv(args.csv, schema)
    save_relation(relation, args.out)
    print(json.dumps({"out": str(args.out), "rows": relation.row_count,
                      "version": relation.version}))
    return EXIT_OK


def cmd_sample(args) -> int:
    relation = load_relation(args.rel)
    sample = build_sample(relation, args.rate, args.seed)
    if args.out:
        write_csv(Relation(relation.schema, sample.columns,
                           relation.version), args.out)
    summary = {"rows": relation.row_count, "sample_size": sample.size,
               "rate": args.rate, "seed": args.seed}
    if args.out:
        summary["out"] = str(args.out)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_query(args) -> int:
    relation = load_relation(args.rel)
    config = _engine_config(args)
    synopsis = (_load_or_new_synopsis(args.synopsis)
                if args.synopsis else None)
    engine = QueryEngine(relation, config, synopsis=synopsis)
    use_model = not args.no_model

    if args.online:
        parsed = parse(args.sql, relation.schema)
        if isinstance(parsed, SupportedQuery) and parsed.groupby:
            raise _Usage("GROUP BY is not available with --online")
        try:
            for result in engine.answer_online(args.sql,
                                               batch_size=args.batch,
                                               use_model=use_model):
                _print_result(result, rows_scanned=result.rows_scanned)
        except UnsupportedQueryError as exc:
            _print_unanswerable(exc.reason)
            return EXIT_UNSUPPORTED
        exit_code = EXIT_OK
    else:
        try:
            result = engine.answer_query(args.sql, use_model=use_model)
        except UnsupportedQueryError as exc:
            _print_unanswerable(exc.reason)
            return EXIT_UNSUPPORTED
        _print_result(result)
        exit_code = EXIT_OK if result.supported else EXIT_UNSUPPORTED

    if args.synopsis:
        synopsis_io.save(engine.synopsis, args.synopsis)
    return exit_code


def cmd_train(args) -> int:
    relation = load_relation(args.rel)
    config = _engine_config(args)
    synopsis = synopsis_io.load(args.synopsis)
    engine = QueryEngine(relation, config, synopsis=synopsis)
    report = engine.train(restarts=args.restarts, seed=args.seed)
    synopsis_io.save(engine.synopsis, args.synopsis)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_append(args) -> int:
    relation = load_relation(args.rel)
    config = _engine_config(args)
    batch = load_csv(args.csv, relation.schema)
    if args.synopsis:
        synopsis = _load_or_new_synopsis(args.synopsis)
        engine = QueryEngine(relation, config, synopsis=synopsis)
        report = engine.append(batch, adjust=not args.no_adjust)
        merged = engine.relation
        synopsis_io.save(engine.synopsis, args.synopsis)
    else:
        merged, (n_old, n_new) = append_rows(relation, batch)
        report = {"rows_before": n_old, "rows_appended": n_new,
                  "version": merged.version}
    save_relation(merged, args.rel)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    engine_config = (EngineConfig.from_file(args.config)
                     if args.config else EngineConfig())
    data = gen_synthetic(SyntheticSpec(rows=args.rows, grid=(args.grid,),
                                       seed=args.data_seed))
    workload = gen_workload(WorkloadSpec(count=args.queries,
                                         overlap=args.overlap,
                                         seed=args.workload_seed))
    bench_config = BenchConfig(engine=engine_config,
                               use_model=not args.no_model)
    report = run_bench(data.relation, workload, bench_config)
    emit_report(report, args.out, args.summary)
    print(json.dumps(report_summary(report), sort_keys=True))
    return EXIT_OK


def cmd_synopsis(args) -> int:
    synopsis = synopsis_io.load(args.synopsis)
    if args.action == "stats":
        keys = {}
        for g in synopsis.keys():
            trained = synopsis.trained.get(g)
            keys[str(g)] = {
                "entries": synopsis.size(g),
                "trained": trained is not None,
                "data_version": None if trained is None
                else trained.data_version,
            }
        print(json.dumps({"cap": synopsis.cap, "clock": synopsis.clock,
                          "entries": synopsis.size(), "keys": keys},
                         sort_keys=True))
        return EXIT_OK
    for g in synopsis.keys():
        for entry in synopsis.entries_for(g):
            print(json.dumps({
                "g": str(g),
                "snippet": synopsis_io.snippet_to_json(entry.snippet),
                "theta": entry.theta,
                "beta": entry.beta,
                "last_used": entry.last_used,
                "data_version": entry.data_version,
            }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

class _Usage(Exception):
    """Command-level usage error, reported with exit code 1."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="querysage",
        description="Approximate query answers that improve as the engine "
                    "learns from past queries.",
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_ArgumentParser)

    p = sub.add_parser("load", help="import a CSV into a relation bundle")
    p.add_argument("--csv", required=True, help="input CSV file")
    p.add_argument("--schema", required=True,
                   help="schema JSON file: [{name, role, kind}, ...]")
    p.add_argument("--out", required=True, help="bundle directory to create")
    p.set_defaults(fn=cmd_load)

    p = sub.add_parser("sample", help="draw a uniform sample")
    p.add_argument("--rel", required=True, help="relation bundle directory")
    p.add_argument("--rate", type=float, required=True,
                   help="sampling rate in (0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the sampled rows as CSV")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("query", help="answer a SQL query")
    p.add_argument("--rel", required=True, help="relation bundle directory")
    p.add_argument("--sql", required=True)
    p.add_argument("--synopsis",
                   help="synopsis file to learn from and update")
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--confidence", type=float,
                   help="interval mass for ci (overrides config)")
    p.add_argument("--online", action="store_true",
                   help="stream refinements over the full table")
    p.add_argument("--batch", type=int, default=None,
                   help="online refinement step in rows")
    p.add_argument("--no-model", action="store_true",
                   help="raw sampling pipeline only")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("train", help="fit correlation parameters")
    p.add_argument("--synopsis", required=True, help="synopsis file")
    p.add_argument("--rel", required=True,
                   help="relation bundle (for attribute extents)")
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("append", help="append rows and adjust the synopsis")
    p.add_argument("--rel", required=True, help="relation bundle directory")
    p.add_argument("--csv", required=True, help="rows to append")
    p.add_argument("--synopsis", help="synopsis file to adjust")
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--no-adjust", action="store_true",
                   help="skip the synopsis adjustment")
    p.set_defaults(fn=cmd_append)

    p = sub.add_parser("bench", help="synthetic benchmark with reports")
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--out", required=True, help="per-snippet CSV report")
    p.add_argument("--summary", help="write the JSON summary here too")
    p.add_argument("--rows", type=int, default=100_000)
    p.add_argument("--grid", type=int, default=500)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--data-seed", type=int, default=11)
    p.add_argument("--workload-seed", type=int, default=5)
    p.add_argument("--no-model", action="store_true",
                   help="raw pipeline baseline run")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("synopsis", help="inspect a synopsis file")
    p.add_argument("action", choices=("show", "stats"))
    p.add_argument("--synopsis", required=True, help="synopsis file")
    p.set_defaults(fn=cmd_synopsis)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    try:
        return args.fn(args)
    except _Usage as exc:
        print(f"querysage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"querysage: query error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError) as exc:
        print(f"querysage: {exc}", file=sys.stderr)
        return EXIT_DATA
    except QuerySageError as exc:
        print(f"querysage: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"querysage: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
