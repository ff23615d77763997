"""SQL frontend: parse the supported subset, split queries into snippets,
and recompose improved snippet answers into final values.

Supported grammar:

    SELECT <agg> [, <agg>]* FROM <table>
        [WHERE <atom> [AND <atom>]*]
        [GROUP BY <attr> [, <attr>]*]

    agg  := AVG(expr) | SUM(expr) | COUNT(*)
    expr := measure arithmetic over +, -, * and numeric constants
    atom := attr op const | const op attr | attr BETWEEN a AND b
          | attr IN ('v', ...)
    op   := = | < | <= | > | >=

Disjunctions, LIKE, subqueries and HAVING are recognized and reported as
Unsupported (stable reason strings); they are well-formed queries outside
the model's reach, which is different from a syntax error. Disjunctive
WHERE clauses keep an evaluable predicate tree so the raw path can still
answer them.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .errors import DataError, ParseError, SchemaError
from .relation import Schema

INF = math.inf


def fmt_num(v: float) -> str:
    """Canonical numeric literal: integers without a decimal point."""
    f = float(v)
    if math.isinf(f):
        raise ValueError("cannot print an infinite bound")
    if f == int(f) and abs(f) < 1e16:
        return str(int(f))
    return repr(f)


# ---------------------------------------------------------------------------
# measure expressions


@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class BinOp:
    op: str  # + - *
    left: "Expr"
    right: "Expr"


Expr = Union[Col, Const, BinOp]

_PRECEDENCE = {"+": 1, "-": 1, "*": 2}


def expr_text(node: Expr, parent_prec: int = 0) -> str:
    if isinstance(node, Col):
        return node.name
    if isinstance(node, Const):
        return fmt_num(node.value)
    prec = _PRECEDENCE[node.op]
    # subtraction is left-associative; right operand at equal precedence
    # needs parens (a - (b - c))
    left = expr_text(node.left, prec)
    right = expr_text(node.right, prec + (1 if node.op == "-" else 0))
    text = f"{left} {node.op} {right}"
    if prec < parent_prec:
        return f"({text})"
    return text


def expr_columns(node: Expr) -> set[str]:
    if isinstance(node, Col):
        return {node.name}
    if isinstance(node, Const):
        return set()
    return expr_columns(node.left) | expr_columns(node.right)


def eval_expr(node: Expr, columns: Mapping[str, object]):
    if isinstance(node, Col):
        return columns[node.name]
    if isinstance(node, Const):
        return node.value
    left = eval_expr(node.left, columns)
    right = eval_expr(node.right, columns)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    return left * right


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class Range:
    """Closed-by-default interval; strict flags mark open endpoints."""

    lo: float = -INF
    hi: float = INF
    lo_strict: bool = False
    hi_strict: bool = False

    def intersect(self, other: "Range") -> "Range":
        # on equal bounds the strict (open) endpoint is the tighter one
        lo, lo_strict = max(
            (self.lo, self.lo_strict), (other.lo, other.lo_strict)
        )
        hi, hi_closed = min(
            (self.hi, not self.hi_strict), (other.hi, not other.hi_strict)
        )
        return Range(lo, hi, lo_strict, not hi_closed)

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi and not (self.lo_strict or self.hi_strict)

    @property
    def is_empty(self) -> bool:
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and (self.lo_strict or self.hi_strict)


@dataclass(frozen=True)
class Predicate:
    """Conjunction of per-attribute constraints; absent attr = unconstrained."""

    ranges: tuple[tuple[str, Range], ...] = ()
    in_lists: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @classmethod
    def build(cls, ranges: Mapping[str, Range] | None = None,
              in_lists: Mapping[str, Iterable[str]] | None = None) -> "Predicate":
        r = tuple(sorted((k, v) for k, v in (ranges or {}).items()))
        i = tuple(sorted((k, tuple(sorted(set(v)))) for k, v in (in_lists or {}).items()))
        return cls(r, i)

    @property
    def range_map(self) -> dict[str, Range]:
        return dict(self.ranges)

    @property
    def in_map(self) -> dict[str, tuple[str, ...]]:
        return dict(self.in_lists)

    def constrained(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.ranges) + tuple(k for k, _ in self.in_lists)

    def with_group(self, attr: str, value, numeric: bool) -> "Predicate":
        """Fold a groupby value in as an equality/point constraint."""
        ranges = self.range_map
        in_lists = {k: set(v) for k, v in self.in_lists}
        if numeric:
            point = Range(float(value), float(value))
            ranges[attr] = ranges[attr].intersect(point) if attr in ranges else point
        else:
            vals = {str(value)}
            in_lists[attr] = in_lists[attr] & vals if attr in in_lists else vals
        return Predicate.build(ranges, in_lists)

    def is_empty(self) -> bool:
        return any(r.is_empty for _, r in self.ranges) or any(
            not vals for _, vals in self.in_lists
        )


# ---------------------------------------------------------------------------
# boolean trees for the raw-only (unsupported) path


@dataclass(frozen=True)
class RangeAtom:
    attr: str
    range: Range


@dataclass(frozen=True)
class InAtom:
    attr: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class And:
    children: tuple["BoolExpr", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["BoolExpr", ...]


BoolExpr = Union[RangeAtom, InAtom, And, Or]


def _contains_or(node: BoolExpr | None) -> bool:
    if node is None:
        return False
    if isinstance(node, Or):
        return True
    if isinstance(node, And):
        return any(_contains_or(c) for c in node.children)
    return False


def predicate_attrs(node: BoolExpr | None) -> tuple[str, ...]:
    """Attributes referenced by a predicate tree, in first-seen order."""
    seen: list[str] = []

    def walk(n: BoolExpr | None) -> None:
        if n is None:
            return
        if isinstance(n, (And, Or)):
            for c in n.children:
                walk(c)
        elif n.attr not in seen:
            seen.append(n.attr)

    walk(node)
    return tuple(seen)


# ---------------------------------------------------------------------------
# queries and snippets


@dataclass(frozen=True)
class AggregateSpec:
    fn: str                 # avg | sum | count
    arg: Expr | None = None  # measure expression; None only for count

    def __post_init__(self) -> None:
        if self.fn in ("avg", "sum") and self.arg is None:
            raise ParseError(f"{self.fn.upper()} requires an argument")
        if self.fn == "count" and self.arg is not None:
            raise ParseError("COUNT takes only *")

    @property
    def text(self) -> str:
        if self.fn == "count":
            return "COUNT(*)"
        return f"{self.fn.upper()}({expr_text(self.arg)})"


@dataclass(frozen=True)
class AggKey:
    """Internal aggregate identity: AVG over one measure expression, or FREQ."""

    kind: str  # avg | freq
    arg: str   # canonical expression text, or "*" for freq

    def __str__(self) -> str:
        return f"{self.kind}:{self.arg}"

    @classmethod
    def parse(cls, text: str) -> "AggKey":
        kind, _, arg = text.partition(":")
        if kind not in ("avg", "freq") or not arg:
            raise DataError(f"bad aggregate key {text!r}")
        return cls(kind, arg)

    @classmethod
    def avg(cls, expr: Expr) -> "AggKey":
        return cls("avg", expr_text(expr))

    @classmethod
    def freq(cls) -> "AggKey":
        return cls("freq", "*")


@dataclass(frozen=True)
class QuerySnippet:
    g: AggKey
    predicate: Predicate


@dataclass(frozen=True)
class SupportedQuery:
    table: str
    aggregates: tuple[AggregateSpec, ...]
    predicate: Predicate
    groupby: tuple[str, ...] = ()


@dataclass(frozen=True)
class Unsupported:
    reason: str
    raw: "RawQuery | None" = None


@dataclass(frozen=True)
class RawQuery:
    """Evaluable form of an unsupported query (currently: disjunctions)."""

    table: str
    aggregates: tuple[AggregateSpec, ...]
    where: BoolExpr | None
    groupby: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><=|>=|<>|!=|[()=<>,*+\-])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "AND", "OR", "IN",
    "BETWEEN", "LIKE", "HAVING", "AS", "NOT", "AVG", "SUM", "COUNT",
}


@dataclass(frozen=True)
class Token:
    kind: str  # keyword | ident | number | string | op | end
    value: str
    pos: int


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise ParseError(f"unexpected character {sql[pos]!r} at position {pos}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        text = m.group()
        if kind == "ident":
            upper = text.upper()
            if upper in _KEYWORDS:
                tokens.append(Token("keyword", upper, m.start()))
            else:
                tokens.append(Token("ident", text, m.start()))
        elif kind == "string":
            if not text.endswith("'"):
                raise ParseError(f"unterminated string at position {m.start()}")
            tokens.append(Token("string", text[1:-1].replace("''", "'"), m.start()))
        else:
            tokens.append(Token(kind, text, m.start()))
    tokens.append(Token("end", "", len(sql)))
    return tokens


def parse_expr_text(text: str) -> Expr:
    """Parse a bare measure expression, e.g. a stored aggregate argument."""
    parser = _Parser(tokenize(text), None)
    node = parser.parse_expr()
    tail = parser.peek()
    if tail.kind != "end":
        raise ParseError(f"trailing input at position {tail.pos}: {tail.value!r}")
    return node


class _Parser:
    def __init__(self, tokens: list[Token], schema: Schema | None):
        self.tokens = tokens
        self.schema = schema
        self.i = 0
        self.unsupported: str | None = None

    # -- token helpers -----------------------------------------------------
    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, kind: str, value: str | None = None) -> Token | None:
        tok = self.peek()
        if tok.kind == kind and (value is None or tok.value == value):
            return self.next()
        return None

    def expect(self, kind: str, value: str | None = None) -> Token:
        tok = self.accept(kind, value)
        if tok is None:
            got = self.peek()
            want = value or kind
            raise ParseError(f"expected {want}, got {got.value!r} at position {got.pos}")
        return tok

    def flag(self, reason: str) -> None:
        # first reason wins; later ones do not overwrite it
        if self.unsupported is None:
            self.unsupported = reason

    def attr(self, name: str):
        try:
            return self.schema.attribute(name)
        except SchemaError as exc:
            raise ParseError(str(exc)) from exc

    # -- grammar -----------------------------------------------------------
    def parse_query(self) -> SupportedQuery | Unsupported:
        self.expect("keyword", "SELECT")
        aggregates, plain_idents = self.parse_select_list()
        self.expect("keyword", "FROM")
        if self.peek().kind == "op" and self.peek().value == "(":
            self.flag("subquery")
            raise _Bail()
        table = self.expect("ident").value
        where: BoolExpr | None = None
        if self.accept("keyword", "WHERE"):
            where = self.parse_or()
        groupby: tuple[str, ...] = ()
        if self.accept("keyword", "GROUP"):
            self.expect("keyword", "BY")
            groupby = self.parse_groupby()
        if self.accept("keyword", "HAVING"):
            self.flag("having")
            raise _Bail()
        end = self.peek()
        if end.kind != "end":
            raise ParseError(f"trailing input at position {end.pos}: {end.value!r}")

        for ident in plain_idents:
            if ident not in groupby:
                raise ParseError(
                    f"bare select item {ident!r} is not a GROUP BY attribute"
                )
        if not aggregates:
            raise ParseError("no aggregate in SELECT list")
        for attr in groupby:
            if self.attr(attr).role != "dimension":
                raise ParseError(f"GROUP BY attribute {attr!r} is not a dimension")

        raw = RawQuery(table, tuple(aggregates), where, groupby)
        if self.unsupported is not None:
            return Unsupported(self.unsupported, raw)
        if _contains_or(where):
            return Unsupported("disjunction", raw)
        # the learned model prices predicate regions in dimension space,
        # so measure-attribute filters fall back to the raw path
        if any(self.attr(a).role != "dimension" for a in predicate_attrs(where)):
            return Unsupported("measure predicate", raw)
        predicate = self.fold_conjunction(where)
        return SupportedQuery(table, tuple(aggregates), predicate, groupby)

    def parse_select_list(self) -> tuple[list[AggregateSpec], list[str]]:
        aggs: list[AggregateSpec] = []
        idents: list[str] = []
        while True:
            tok = self.peek()
            if tok.kind == "keyword" and tok.value in ("AVG", "SUM", "COUNT"):
                aggs.append(self.parse_aggregate())
            elif tok.kind == "ident":
                name = self.next().value
                if self.peek().kind == "op" and self.peek().value == "(":
                    # some other SQL aggregate (MIN, MAX, STDDEV, ...)
                    self.flag("unsupported aggregate")
                    raise _Bail()
                # groupby echo column; validated after GROUP BY is known
                idents.append(name)
            elif tok.kind == "op" and tok.value == "(":
                self.flag("subquery")
                raise _Bail()
            else:
                raise ParseError(
                    f"expected aggregate or column at position {tok.pos}"
                )
            if not self.accept("op", ","):
                return aggs, idents

    def parse_aggregate(self) -> AggregateSpec:
        fn = self.next().value.lower()
        self.expect("op", "(")
        if fn == "count":
            if self.peek().kind == "ident" and self.peek().value.upper() == "DISTINCT":
                self.flag("distinct")
                raise _Bail()
            self.expect("op", "*")
            self.expect("op", ")")
            return AggregateSpec("count", None)
        expr = self.parse_expr()
        self.expect("op", ")")
        for col in expr_columns(expr):
            if self.attr(col).role != "measure":
                raise ParseError(
                    f"aggregate argument {col!r} must be a measure attribute"
                )
        return AggregateSpec(fn, expr)

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.value in "+-":
                op = self.next().value
                node = BinOp(op, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.value == "*":
                self.next()
                node = BinOp("*", node, self.parse_factor())
            else:
                return node

    def parse_factor(self) -> Expr:
        tok = self.peek()
        if self.accept("op", "("):
            node = self.parse_expr()
            self.expect("op", ")")
            return node
        if self.accept("op", "-"):
            inner = self.parse_factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return BinOp("-", Const(0.0), inner)
        if tok.kind == "number":
            self.next()
            return Const(float(tok.value))
        if tok.kind == "ident":
            self.next()
            return Col(tok.value)
        raise ParseError(f"bad expression at position {tok.pos}")

    def parse_groupby(self) -> tuple[str, ...]:
        attrs = [self.expect("ident").value]
        while self.accept("op", ","):
            attrs.append(self.expect("ident").value)
        return tuple(attrs)

    # -- WHERE clause ------------------------------------------------------
    def parse_or(self) -> BoolExpr:
        children = [self.parse_and()]
        while self.accept("keyword", "OR"):
            children.append(self.parse_and())
        if len(children) == 1:
            return children[0]
        return Or(tuple(children))

    def parse_and(self) -> BoolExpr:
        children = [self.parse_atom()]
        while self.accept("keyword", "AND"):
            children.append(self.parse_atom())
        if len(children) == 1:
            return children[0]
        return And(tuple(children))

    def parse_atom(self) -> BoolExpr:
        if self.accept("op", "("):
            inner = self.parse_or()
            self.expect("op", ")")
            return inner
        if self.accept("keyword", "NOT"):
            self.flag("negation")
            raise _Bail()
        tok = self.peek()
        if tok.kind in ("number", "string") or (tok.kind == "op" and tok.value == "-"):
            # const op attr: flip it
            const = self.parse_const()
            op = self.expect("op").value
            if op in ("<>", "!="):
                raise ParseError("inequality (<>) predicates are not supported")
            attr = self.expect("ident").value
            return self.comparison(attr, _FLIP[op], const)
        attr_tok = self.expect("ident")
        attr = attr_tok.value
        if self.accept("keyword", "LIKE"):
            self.expect("string")
            self.flag("like")
            raise _Bail()
        if self.accept("keyword", "BETWEEN"):
            self.check_numeric(attr)
            lo = self.parse_signed_number()
            self.expect("keyword", "AND")
            hi = self.parse_signed_number()
            return RangeAtom(attr, Range(lo, hi))
        if self.accept("keyword", "IN"):
            self.expect("op", "(")
            if self.peek().kind == "keyword" and self.peek().value == "SELECT":
                self.flag("subquery")
                raise _Bail()
            if self.peek().kind != "string":
                raise ParseError(
                    f"IN lists are supported for categorical attributes only "
                    f"(attribute {attr!r}); use BETWEEN or comparisons for numerics"
                )
            self.check_categorical(attr)
            values = [self.expect("string").value]
            while self.accept("op", ","):
                values.append(self.expect("string").value)
            self.expect("op", ")")
            return InAtom(attr, tuple(sorted(set(values))))
        op_tok = self.expect("op")
        if op_tok.value in ("<>", "!="):
            raise ParseError("inequality (<>) predicates are not supported")
        if op_tok.value not in ("=", "<", "<=", ">", ">="):
            raise ParseError(f"bad comparison operator {op_tok.value!r}")
        const = self.parse_const()
        return self.comparison(attr, op_tok.value, const)

    def parse_const(self) -> Token:
        if self.accept("op", "-"):
            tok = self.expect("number")
            return Token("number", "-" + tok.value, tok.pos)
        tok = self.next()
        if tok.kind not in ("number", "string"):
            raise ParseError(f"expected constant at position {tok.pos}")
        return tok

    def parse_signed_number(self) -> float:
        if self.accept("op", "-"):
            return -float(self.expect("number").value)
        return float(self.expect("number").value)

    def comparison(self, attr: str, op: str, const: Token) -> BoolExpr:
        if const.kind == "string":
            self.check_categorical(attr)
            if op != "=":
                raise ParseError(
                    f"ordering comparison on categorical attribute {attr!r}"
                )
            return InAtom(attr, (const.value,))
        self.check_numeric(attr)
        v = float(const.value)
        if op == "=":
            return RangeAtom(attr, Range(v, v))
        if op == "<":
            return RangeAtom(attr, Range(-INF, v, False, True))
        if op == "<=":
            return RangeAtom(attr, Range(-INF, v))
        if op == ">":
            return RangeAtom(attr, Range(v, INF, True, False))
        return RangeAtom(attr, Range(v, INF))

    def check_numeric(self, attr: str) -> None:
        if self.attr(attr).kind != "numeric":
            raise ParseError(f"range predicate on non-numeric attribute {attr!r}")

    def check_categorical(self, attr: str) -> None:
        if self.attr(attr).kind != "categorical":
            raise ParseError(f"IN/equality string predicate on non-categorical "
                             f"attribute {attr!r}")

    def fold_conjunction(self, node: BoolExpr | None) -> Predicate:
        ranges: dict[str, Range] = {}
        in_lists: dict[str, set[str]] = {}

        def fold(n: BoolExpr) -> None:
            if isinstance(n, And):
                for c in n.children:
                    fold(c)
            elif isinstance(n, RangeAtom):
                if n.attr in ranges:
                    ranges[n.attr] = ranges[n.attr].intersect(n.range)
                else:
                    ranges[n.attr] = n.range
            elif isinstance(n, InAtom):
                vals = set(n.values)
                if n.attr in in_lists:
                    in_lists[n.attr] &= vals
                else:
                    in_lists[n.attr] = vals
            else:  # pragma: no cover - Or is rejected before folding
                raise ParseError("disjunction cannot be folded")

        if node is not None:
            fold(node)
        return Predicate.build(ranges, in_lists)


_FLIP = {"=": "=", "<": ">", "<=": ">=", ">": "<", ">=": "<="}


class _Bail(Exception):
    """Internal: stop parsing once an unsupported construct is certain."""


def parse(sql: str, schema: Schema) -> SupportedQuery | Unsupported:
    """Parse SQL text against a schema.

    Returns a SupportedQuery, or Unsupported(reason) for well-formed
    queries outside the subset. Raises ParseError for text that is not a
    query at all (or references unknown attributes).
    """
    tokens = tokenize(sql)
    parser = _Parser(tokens, schema)
    try:
        return parser.parse_query()
    except _Bail:
        return Unsupported(parser.unsupported or "unsupported")


# ---------------------------------------------------------------------------
# canonical printing


def _print_range(attr: str, r: Range) -> list[str]:
    if r.is_point:
        return [f"{attr} = {fmt_num(r.lo)}"]
    both = not math.isinf(r.lo) and not math.isinf(r.hi)
    if both and not r.lo_strict and not r.hi_strict:
        return [f"{attr} BETWEEN {fmt_num(r.lo)} AND {fmt_num(r.hi)}"]
    parts = []
    if not math.isinf(r.lo):
        parts.append(f"{attr} {'>' if r.lo_strict else '>='} {fmt_num(r.lo)}")
    if not math.isinf(r.hi):
        parts.append(f"{attr} {'<' if r.hi_strict else '<='} {fmt_num(r.hi)}")
    return parts


def _quote(v: str) -> str:
    return "'" + v.replace("'", "''") + "'"


def print_predicate(pred: Predicate) -> str:
    parts: list[str] = []
    for attr, r in pred.ranges:
        parts.extend(_print_range(attr, r))
    for attr, values in pred.in_lists:
        if len(values) == 1:
            parts.append(f"{attr} = {_quote(values[0])}")
        else:
            parts.append(f"{attr} IN ({', '.join(_quote(v) for v in values)})")
    return " AND ".join(parts)


def print_sql(query: SupportedQuery) -> str:
    """Emit canonical SQL; parse(print_sql(q)) == q on the supported grammar."""
    sel = ", ".join(a.text for a in query.aggregates)
    text = f"SELECT {sel} FROM {query.table}"
    where = print_predicate(query.predicate)
    if where:
        text += f" WHERE {where}"
    if query.groupby:
        text += f" GROUP BY {', '.join(query.groupby)}"
    return text


def snippet_sql(snippet: QuerySnippet, table: str) -> str:
    """A snippet as a standalone supported query (Definition-1 closure)."""
    if snippet.g.kind == "avg":
        sel = f"AVG({snippet.g.arg})"
    else:
        sel = "COUNT(*)"
    text = f"SELECT {sel} FROM {table}"
    where = print_predicate(snippet.predicate)
    if where:
        text += f" WHERE {where}"
    return text


# ---------------------------------------------------------------------------
# decomposition and composition


def internal_keys(spec: AggregateSpec) -> tuple[AggKey, ...]:
    if spec.fn == "avg":
        return (AggKey.avg(spec.arg),)
    if spec.fn == "count":
        return (AggKey.freq(),)
    return (AggKey.avg(spec.arg), AggKey.freq())


@dataclass(frozen=True)
class GroupPlan:
    values: tuple = ()
    predicate: Predicate = Predicate()
    improved: bool = True
    needs: tuple[AggKey, ...] = ()

    def snippets(self) -> tuple[QuerySnippet, ...]:
        return tuple(QuerySnippet(g, self.predicate) for g in self.needs)


def plan_groups(query: SupportedQuery, group_values: Sequence[tuple],
                n_max: int, schema: Schema) -> tuple[GroupPlan, ...]:
    """Expand a query into per-group plans; groups beyond n_max are
    flagged passthrough (answered raw, never improved)."""
    if not query.groupby:
        group_values = [()]
    needs: list[AggKey] = []
    for spec in query.aggregates:
        for key in internal_keys(spec):
            if key not in needs:
                needs.append(key)
    plans = []
    for rank, values in enumerate(group_values):
        pred = query.predicate
        for attr, value in zip(query.groupby, values):
            pred = pred.with_group(attr, value, schema.is_numeric(attr))
        plans.append(GroupPlan(tuple(values), pred, rank < n_max, tuple(needs)))
    return tuple(plans)


def decompose(query: SupportedQuery, group_values: Sequence[tuple],
              n_max: int, schema: Schema) -> list[QuerySnippet]:
    """Snippets to improve: one per (internal aggregate, group) for the
    first n_max groups."""
    out: list[QuerySnippet] = []
    for plan in plan_groups(query, group_values, n_max, schema):
        if plan.improved:
            out.extend(plan.snippets())
    return out


def compose_answer(g_answers: Mapping[AggKey, tuple[float, float]],
                   spec: AggregateSpec, cardinality: int) -> tuple[float, float]:
    """Combine improved snippet answers into the user-facing aggregate.

    COUNT = round(FREQ * cardinality) with error beta_freq * cardinality;
    SUM = AVG * COUNT with the delta-method error
    sqrt((AVG * beta_COUNT)^2 + (COUNT * beta_AVG)^2).
    """
    try:
        if spec.fn == "avg":
            return g_answers[AggKey.avg(spec.arg)]
        freq, freq_err = g_answers[AggKey.freq()]
        count = float(round(freq * cardinality))
        count_err = freq_err * cardinality
        if spec.fn == "count":
            return count, count_err
        avg, avg_err = g_answers[AggKey.avg(spec.arg)]
        total = avg * count
        err = math.sqrt((avg * count_err) ** 2 + (count * avg_err) ** 2)
        return total, err
    except KeyError as exc:
        raise DataError(f"missing constituent snippet answer: {exc}") from exc
