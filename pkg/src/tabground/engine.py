"""Deterministic executor for the six table tools plus final-answer termination."""

from __future__ import annotations

import hashlib
import json
import operator
from dataclasses import dataclass, field
from typing import Any, Mapping

from .table import Table, format_number, parse_number, resolve_column, to_text

FINAL_ANSWER = "f_final_answer"
TOOL_NAMES = ("filter", "sort", "aggregate", "lookup", "compare", "select", FINAL_ANSWER)

_OP_ALIASES = {
    "=": "=", "==": "=", "eq": "=",
    "≠": "≠", "!=": "≠", "<>": "≠", "ne": "≠",
    "<": "<", "lt": "<",
    "≤": "≤", "<=": "≤", "le": "≤",
    ">": ">", "gt": ">",
    "≥": "≥", ">=": "≥", "ge": "≥",
    "contains": "contains",
}
_CMP = {
    "=": operator.eq, "≠": operator.ne, "<": operator.lt,
    "≤": operator.le, ">": operator.gt, "≥": operator.ge,
}
AGGREGATES = ("sum", "count", "average", "min", "max")


class InvalidToolCall(ValueError):
    """Tool name or arguments are ill-typed."""


class ToolError(Exception):
    kind = "ToolError"


class UnknownColumn(ToolError):
    kind = "UnknownColumn"


class RowOutOfRange(ToolError):
    kind = "RowOutOfRange"


class NonNumericAggregate(ToolError):
    kind = "NonNumericAggregate"


class EmptyInput(ToolError):
    kind = "EmptyInput"


def _req_str(args: Mapping, key: str) -> str:
    v = args.get(key)
    if not isinstance(v, str) or not v:
        raise InvalidToolCall(f"argument {key!r} must be a non-empty string, got {v!r}")
    return v


def _req_row(v: Any, key: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidToolCall(f"argument {key!r} must be an integer row index, got {v!r}")
    return v


def _check_ref(ref: Any, key: str) -> dict:
    if not isinstance(ref, Mapping):
        raise InvalidToolCall(f"argument {key!r} must be an object with 'column' and optional 'row'")
    out = {"column": _req_str(ref, "column"), "row": ref.get("row", 0)}
    out["row"] = 0 if out["row"] is None else _req_row(out["row"], f"{key}.row")
    return out


def _normalize_args(tool: str, args: Mapping) -> dict:
    if tool == "filter":
        op = _OP_ALIASES.get(str(args.get("op", "=")).strip().lower())
        if op is None:
            raise InvalidToolCall(f"unknown comparison operator {args.get('op')!r}")
        value = args.get("value")
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = format_number(float(value))
        if not isinstance(value, str):
            raise InvalidToolCall(f"filter value must be a string or number, got {value!r}")
        return {"column": _req_str(args, "column"), "op": op, "value": value}
    if tool == "sort":
        direction = str(args.get("direction", "asc")).lower()
        if direction not in ("asc", "desc"):
            raise InvalidToolCall(f"sort direction must be 'asc' or 'desc', got {direction!r}")
        return {"column": _req_str(args, "column"), "direction": direction}
    if tool == "aggregate":
        kind = str(args.get("kind", "")).lower()
        if kind == "avg" or kind == "mean":
            kind = "average"
        if kind not in AGGREGATES:
            raise InvalidToolCall(f"aggregate kind must be one of {AGGREGATES}, got {args.get('kind')!r}")
        return {"column": _req_str(args, "column"), "kind": kind}
    if tool == "lookup":
        return {"column": _req_str(args, "column"), "row": _req_row(args.get("row"), "row")}
    if tool == "compare":
        return {"left": _check_ref(args.get("left"), "left"), "right": _check_ref(args.get("right"), "right")}
    if tool == "select":
        cols = args.get("columns")
        if isinstance(cols, str):
            cols = [cols]
        if not isinstance(cols, (list, tuple)) or not cols or not all(isinstance(c, str) and c for c in cols):
            raise InvalidToolCall(f"select needs a non-empty list of column names, got {cols!r}")
        if len(set(cols)) != len(cols):
            raise InvalidToolCall(f"select lists a column twice: {list(cols)}")
        return {"columns": list(cols)}
    answer = args.get("answer", "")
    if isinstance(answer, (int, float)) and not isinstance(answer, bool):
        answer = format_number(float(answer))
    if not isinstance(answer, str):
        raise InvalidToolCall(f"final answer must be a string, got {answer!r}")
    return {"answer": answer}


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        tool = str(self.tool).strip().lower()
        if tool == "final_answer":
            tool = FINAL_ANSWER
        if tool not in TOOL_NAMES:
            raise InvalidToolCall(f"unknown tool {self.tool!r}")
        if not isinstance(self.args, Mapping):
            raise InvalidToolCall("tool arguments must be an object")
        object.__setattr__(self, "tool", tool)
        object.__setattr__(self, "args", _normalize_args(tool, self.args))

    @property
    def is_final(self) -> bool:
        return self.tool == FINAL_ANSWER

    def to_json(self) -> dict:
        return {"tool": self.tool, "args": dict(self.args)}

    @classmethod
    def from_json(cls, obj: Any) -> "ToolCall":
        if isinstance(obj, str):
            try:
                obj = json.loads(obj)
            except json.JSONDecodeError as e:
                raise InvalidToolCall(f"tool call is not valid JSON: {e.msg}") from None
        if not isinstance(obj, Mapping) or "tool" not in obj:
            raise InvalidToolCall("tool call must be an object with a 'tool' field")
        return cls(obj["tool"], obj.get("args") or {})


@dataclass(frozen=True)
class TableState:
    table: Table
    step_index: int = 0
    provenance: ToolCall | None = None

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one tool call.

    ``state`` is always the successor state (the table is unchanged on error and
    on final answer). ``answer`` is set iff the call was a final answer.
    """

    state: TableState
    answer: str | None = None
    error: str | None = None
    reason: str = ""

    @property
    def status(self) -> str:
        return "ok" if self.error is None else "tool_error"

    @property
    def terminal(self) -> bool:
        return self.answer is not None


def _col(table: Table, name: str) -> int:
    j = resolve_column(name, table.columns)
    if j is None:
        raise UnknownColumn(f"no column {name!r} in {list(table.columns)}")
    return j


def _ordering_key(value: str):
    x = parse_number(value)
    if x is not None:
        return (0, x, "")
    return (1, 0.0, value.strip().casefold())


def compare_values(a: str, b: str) -> int:
    """Three-way comparison, numeric when both sides parse as numbers."""
    x, y = parse_number(a), parse_number(b)
    if x is not None and y is not None:
        return (x > y) - (x < y)
    s, t = a.strip().casefold(), b.strip().casefold()
    return (s > t) - (s < t)


def _matches(cell: str, op: str, literal: str) -> bool:
    if op == "contains":
        return literal.strip().casefold() in cell.casefold()
    return _CMP[op](compare_values(cell, literal), 0)


def _filter(table: Table, args) -> Table:
    j = _col(table, args["column"])
    rows = tuple(r for r in table.rows if _matches(r[j], args["op"], args["value"]))
    return Table(table.columns, rows)


def _sort(table: Table, args) -> Table:
    j = _col(table, args["column"])
    rows = sorted(table.rows, key=lambda r: _ordering_key(r[j]), reverse=args["direction"] == "desc")
    return Table(table.columns, tuple(rows))


def _aggregate(table: Table, args) -> Table:
    j = _col(table, args["column"])
    kind = args["kind"]
    cells = [r[j] for r in table.rows]
    name = f"{kind}({table.columns[j]})"
    if kind == "count":
        return Table((name,), ((str(sum(1 for c in cells if c.strip())),),))
    if not cells and kind != "sum":
        raise EmptyInput(f"{kind} over an empty table")
    parsed = [(parse_number(c), c) for c in cells]
    parsed = [(x, c) for x, c in parsed if x is not None]
    if not parsed:
        if kind == "sum" and not cells:
            return Table((name,), (("0",),))
        raise NonNumericAggregate(f"no numeric cells in column {table.columns[j]!r}")
    if kind == "sum":
        value = format_number(sum(x for x, _ in parsed))
    elif kind == "average":
        value = format_number(sum(x for x, _ in parsed) / len(parsed))
    elif kind == "min":
        value = min(parsed, key=lambda p: p[0])[1]
    else:
        value = max(parsed, key=lambda p: p[0])[1]
    return Table((name,), ((value,),))


def _cell(table: Table, ref) -> str:
    j = _col(table, ref["column"])
    i = ref["row"]
    if not 0 <= i < table.n_rows:
        raise RowOutOfRange(f"row {i} outside [0, {table.n_rows})")
    return table.rows[i][j]


def _lookup(table: Table, args) -> Table:
    j = _col(table, args["column"])
    return Table((table.columns[j],), ((_cell(table, args),),))


def _compare(table: Table, args) -> Table:
    c = compare_values(_cell(table, args["left"]), _cell(table, args["right"]))
    return Table(("compare",), (({0: "eq", -1: "lt", 1: "gt"}[c],),))


def _select(table: Table, args) -> Table:
    idx = [_col(table, c) for c in args["columns"]]
    if len(set(idx)) != len(idx):
        raise UnknownColumn(f"select resolves {args['columns']} to repeated columns")
    return Table(tuple(table.columns[j] for j in idx), tuple(tuple(r[j] for j in idx) for r in table.rows))


_TOOLS = {
    "filter": _filter,
    "sort": _sort,
    "aggregate": _aggregate,
    "lookup": _lookup,
    "compare": _compare,
    "select": _select,
}


def execute(state: TableState, call: ToolCall) -> StepOutcome:
    nxt = state.step_index + 1
    if call.is_final:
        return StepOutcome(TableState(state.table, nxt, call), answer=call.args["answer"])
    try:
        table = _TOOLS[call.tool](state.table, call.args)
    except ToolError as e:
        return StepOutcome(TableState(state.table, nxt, call), error=e.kind, reason=str(e))
    return StepOutcome(TableState(table, nxt, call))


def state_hash(state: TableState | Table) -> int:
    """64-bit digest of the canonical serialization of the state's table."""
    table = state.table if isinstance(state, TableState) else state
    digest = hashlib.blake2b(to_text(table).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")
