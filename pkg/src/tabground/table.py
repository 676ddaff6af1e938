"""Table model, canonical pipe-delimited serialization and cell masks.

The serialization is the single text form that attention spans, state hashes
and lexical rewards are defined over::

    | Country | Plants |
    | --- | --- |
    | Algeria | 3 |

Cell text is escaped so that ``|``, ``\\`` and line breaks never collide with
structure. Every header and data cell maps to a half-open character range
(``SpanIndex``) covering exactly its escaped text.
"""

from __future__ import annotations

import enum
import json
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

HEADER_ROW = -1

_DELIM = "|"
_ESCAPES = {"\\": "\\\\", "|": "\\|", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "|": "|", "n": "\n", "r": "\r"}


class InvalidTable(ValueError):
    """A table violates a structural invariant."""


class MalformedTable(InvalidTable):
    """Serialized text does not follow the canonical grammar."""

    def __init__(self, line: int | None, reason: str):
        self.line = line
        self.reason = reason
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


class InvalidPermutation(ValueError):
    pass


def normalize_name(name: str) -> str:
    return " ".join(name.split()).casefold()


def resolve_column(name: str, columns: Sequence[str]) -> int | None:
    """Index of ``name`` in ``columns`` under case/whitespace-insensitive matching."""
    try:
        return list(columns).index(name)
    except ValueError:
        pass
    key = normalize_name(name)
    for i, col in enumerate(columns):
        if normalize_name(col) == key:
            return i
    return None


_THOUSANDS = re.compile(r"^[+-]?\d{1,3}(,\d{3})+(\.\d*)?$")
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def parse_number(text: str) -> float | None:
    """Parse a cell as a number, tolerating thousands separators and a trailing ``%``.

    Returns None for anything else (including ``nan``/``inf`` spellings).
    """
    s = text.strip()
    if s.endswith("%"):
        s = s[:-1].rstrip()
    if _THOUSANDS.match(s):
        s = s.replace(",", "")
    if not _NUMBER.match(s):
        return None
    return float(s)


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.12g}"


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        cols = tuple(self.columns)
        rows = tuple(tuple(r) for r in self.rows)
        if not cols:
            raise InvalidTable("a table needs at least one column")
        for c in cols:
            if not isinstance(c, str) or not c:
                raise InvalidTable(f"column names must be non-empty strings, got {c!r}")
        if len(set(cols)) != len(cols):
            raise InvalidTable(f"duplicate column names in {list(cols)}")
        for i, r in enumerate(rows):
            if len(r) != len(cols):
                raise InvalidTable(f"row {i} has {len(r)} cells, expected {len(cols)}")
            for v in r:
                if not isinstance(v, str):
                    raise InvalidTable(f"row {i} holds non-string cell {v!r}")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "rows", rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.columns)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def column(self, name: str) -> list[str]:
        j = resolve_column(name, self.columns)
        if j is None:
            raise KeyError(name)
        return [r[j] for r in self.rows]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "Table":
        try:
            columns = d["columns"]
            rows = d.get("rows", [])
        except (TypeError, KeyError) as e:
            raise InvalidTable(f"table object needs 'columns' and 'rows': {e}") from None
        if not isinstance(columns, list) or not isinstance(rows, list):
            raise InvalidTable("'columns' and 'rows' must be lists")
        return cls(tuple(columns), tuple(tuple(r) for r in rows))


def _escape(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


@dataclass(frozen=True)
class SpanIndex:
    """Character ranges of every header and cell in a serialized table.

    ``cells`` is keyed by ``(row, col)``; ``headers`` by column. Headers are
    also reachable through ``span(HEADER_ROW, col)``.
    """

    cells: dict[tuple[int, int], tuple[int, int]]
    headers: dict[int, tuple[int, int]]
    length: int
    _order: tuple = field(default=(), repr=False, compare=False)
    _starts: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        entries = [((HEADER_ROW, c), s) for c, s in self.headers.items()]
        entries += list(self.cells.items())
        entries.sort(key=lambda e: (e[1][0], e[1][1]))
        object.__setattr__(self, "_order", tuple(entries))
        object.__setattr__(self, "_starts", tuple(s for _, (s, _) in entries))

    def __len__(self) -> int:
        return len(self.cells) + len(self.headers)

    def span(self, row: int, col: int) -> tuple[int, int]:
        if row == HEADER_ROW:
            return self.headers[col]
        return self.cells[(row, col)]

    def spans(self) -> Iterator[tuple[tuple[int, int], tuple[int, int]]]:
        """All ``(coord, (start, end))`` pairs in document order; headers use ``HEADER_ROW``."""
        return iter(self._order)

    def overlapping(self, start: int, end: int) -> Iterator[tuple[tuple[int, int], int, int]]:
        """Spans intersecting ``[start, end)`` as ``(coord, lo, hi)`` overlap bounds."""
        i = max(bisect_right(self._starts, start) - 1, 0)
        for coord, (s, e) in self._order[i:]:
            if s >= end:
                break
            lo, hi = max(s, start), min(e, end)
            if hi > lo:
                yield coord, lo, hi

    def locate(self, pos: int) -> tuple[int, int] | None:
        """Coordinate whose span contains character ``pos``, or None for delimiters."""
        for coord, lo, _ in self.overlapping(pos, pos + 1):
            return coord
        return None


def serialize(table: Table) -> tuple[str, SpanIndex]:
    parts: list[str] = []
    pos = 0
    headers: dict[int, tuple[int, int]] = {}
    cells: dict[tuple[int, int], tuple[int, int]] = {}

    def emit(s: str) -> None:
        nonlocal pos
        parts.append(s)
        pos += len(s)

    def emit_row(values: Iterable[str], record) -> None:
        emit(_DELIM)
        for j, v in enumerate(values):
            emit(" ")
            esc = _escape(v)
            record(j, (pos, pos + len(esc)))
            emit(esc)
            emit(" " + _DELIM)

    emit_row(table.columns, lambda j, s: headers.__setitem__(j, s))
    emit("\n" + _DELIM + (" --- " + _DELIM) * table.n_cols)
    for i, row in enumerate(table.rows):
        emit("\n")
        emit_row(row, lambda j, s, i=i: cells.__setitem__((i, j), s))
    text = "".join(parts)
    return text, SpanIndex(cells=cells, headers=headers, length=len(text))


def to_text(table: Table) -> str:
    return serialize(table)[0]


def _split_row(line: str, lineno: int) -> list[str]:
    if not (line.startswith("| ") and line.endswith(" |")) or len(line) < 4:
        raise MalformedTable(lineno, "row must start with '| ' and end with ' |'")
    cells: list[str] = []
    buf: list[str] = []
    i, n = 2, len(line)
    while i < n:
        ch = line[i]
        if ch == "\\":
            if i + 1 >= n or line[i + 1] not in _UNESCAPES:
                raise MalformedTable(lineno, f"bad escape at column {i}")
            buf.append(_UNESCAPES[line[i + 1]])
            i += 2
            continue
        if ch == _DELIM:
            if not buf or buf[-1] != " ":
                raise MalformedTable(lineno, f"delimiter at column {i} not preceded by a space")
            cells.append("".join(buf[:-1]))
            buf = []
            i += 1
            if i < n:
                if line[i] != " ":
                    raise MalformedTable(lineno, f"delimiter at column {i - 1} not followed by a space")
                i += 1
            continue
        buf.append(ch)
        i += 1
    if buf:
        raise MalformedTable(lineno, "unterminated cell")
    return cells


def parse_table(text: str) -> Table:
    lines = text.split("\n")
    if lines and lines[-1] == "" and len(lines) > 2:
        lines.pop()
    if len(lines) < 2:
        raise MalformedTable(None, "need a header line and a separator line")
    columns = _split_row(lines[0], 1)
    sep = _DELIM + (" --- " + _DELIM) * len(columns)
    if lines[1] != sep:
        raise MalformedTable(2, f"expected separator {sep!r}")
    seen: set[str] = set()
    for c in columns:
        if not c:
            raise MalformedTable(1, "empty column name")
        if c in seen:
            raise MalformedTable(1, f"duplicate column {c!r}")
        seen.add(c)
    rows = []
    for k, line in enumerate(lines[2:], start=3):
        cells = _split_row(line, k)
        if len(cells) != len(columns):
            raise MalformedTable(k, f"row has {len(cells)} cells under {len(columns)} columns")
        rows.append(tuple(cells))
    return Table(tuple(columns), tuple(rows))


class MaskSource(str, enum.Enum):
    PARSED = "parsed"
    UNIFORM = "uniform-fallback"
    ORACLE = "oracle"
    NOISED = "noised"
    NULL_SHUFFLED = "null-shuffled"


class CellMask:
    """Immutable binary mask over the data cells of a table."""

    __slots__ = ("_bits", "source")

    def __init__(self, bits, source: MaskSource = MaskSource.PARSED):
        arr = np.asarray(bits)
        if arr.ndim != 2:
            if arr.size == 0:
                arr = arr.reshape(0, 0)
            else:
                raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        arr = arr.astype(np.uint8, copy=True)
        arr.flags.writeable = False
        self._bits = arr
        self.source = MaskSource(source)

    @classmethod
    def zeros(cls, shape: tuple[int, int], source: MaskSource = MaskSource.PARSED) -> "CellMask":
        return cls(np.zeros(shape, dtype=np.uint8), source)

    @classmethod
    def uniform(cls, shape: tuple[int, int]) -> "CellMask":
        return cls(np.ones(shape, dtype=np.uint8), MaskSource.UNIFORM)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def shape(self) -> tuple[int, int]:
        return self._bits.shape

    @property
    def count(self) -> int:
        return int(self._bits.sum())

    @property
    def is_uniform(self) -> bool:
        return self.source is MaskSource.UNIFORM

    def with_source(self, source: MaskSource) -> "CellMask":
        return CellMask(self._bits, source)

    def to_list(self) -> list[list[int]]:
        return self._bits.tolist()

    def __eq__(self, other):
        if not isinstance(other, CellMask):
            return NotImplemented
        return (
            self.source == other.source
            and self.shape == other.shape
            and bool(np.array_equal(self._bits, other._bits))
        )

    def __hash__(self):
        return hash((self.source, self.shape, self._bits.tobytes()))

    def __repr__(self):
        return f"CellMask(shape={self.shape}, count={self.count}, source={self.source.value})"


def permute_rows(table: Table, mask: CellMask, perm: Sequence[int]) -> tuple[Table, CellMask]:
    """Reorder rows so that output row ``r`` is input row ``perm[r]``, mask in lockstep."""
    perm = [int(p) for p in perm]
    n = table.n_rows
    if sorted(perm) != list(range(n)):
        raise InvalidPermutation(f"{perm} is not a permutation of range({n})")
    if mask.shape != table.shape:
        raise ValueError(f"mask shape {mask.shape} != table shape {table.shape}")
    rows = tuple(table.rows[p] for p in perm)
    bits = mask.bits[perm, :] if n else mask.bits
    return Table(table.columns, rows), CellMask(bits, mask.source)


def inverse_permutation(perm: Sequence[int]) -> list[int]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv


@dataclass(frozen=True)
class AttentionStandard:
    """One curated (question, table, relevance mask) record."""

    id: str
    dataset: str
    question: str
    table: Table
    mask: CellMask

    def __post_init__(self):
        if self.mask.shape != self.table.shape:
            raise InvalidTable(
                f"record {self.id}: mask shape {self.mask.shape} != table shape {self.table.shape}"
            )

    @classmethod
    def from_json(cls, obj: dict) -> "AttentionStandard":
        try:
            table = Table.from_dict(obj["table"])
            bits = obj["mask"]
            mask = CellMask(
                np.asarray(bits, dtype=np.int64).reshape(table.shape) if table.n_rows == 0 else bits,
                MaskSource.ORACLE,
            )
            return cls(str(obj["id"]), str(obj.get("dataset", "")), str(obj["question"]), table, mask)
        except KeyError as e:
            raise InvalidTable(f"standard record missing field {e}") from None
        except ValueError as e:
            if isinstance(e, InvalidTable):
                raise
            raise InvalidTable(f"record {obj.get('id')!r}: {e}") from None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "question": self.question,
            "table": self.table.to_dict(),
            "mask": self.mask.to_list(),
        }


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise MalformedTable(lineno, f"invalid JSON in {path}: {e.msg}") from None
    return out


def write_jsonl(path: str | Path, objs: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def load_standards(path: str | Path) -> list[AttentionStandard]:
    return [AttentionStandard.from_json(o) for o in read_jsonl(path)]
