"""Plan parsing, ``[target: ...]`` compilation to cell masks, and schema adherence."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .table import CellMask, MaskSource, Table, resolve_column

TOOLS = ("filter", "sort", "aggregate", "lookup", "compare", "select")

_STEP_START = re.compile(
    r"""^\s*
    (?:(?:step\s*)?\d+\s*[.):\-]?\s*)?   # optional step number
    (?:[-*•]\s*)?                    # optional bullet
    \**\s*
    (?P<tool>filter|sort|aggregate|lookup|compare|select)\b
    \s*\**\s*:?\s*\**
    """,
    re.IGNORECASE | re.VERBOSE,
)
_TAG = re.compile(r"\[\s*target\s*:\s*(?P<body>[^\]\[]*)\]", re.IGNORECASE)
_ROW = re.compile(r"^row\s*#?\s*(\d+)$", re.IGNORECASE)


@dataclass(frozen=True)
class TargetRef:
    column: str
    row: int | None = None


@dataclass(frozen=True)
class PlanStep:
    """One tool step. ``target`` is None when the step's tag could not be parsed."""

    index: int
    tool: str
    description: str
    target: tuple[TargetRef, ...] | None

    def __post_init__(self):
        if self.tool not in TOOLS:
            raise ValueError(f"unknown tool {self.tool!r}")
        if self.target is not None:
            object.__setattr__(self, "target", tuple(self.target))
            if not self.target:
                raise ValueError("a parsed target needs at least one reference")

    @property
    def parsed(self) -> bool:
        return self.target is not None

    def to_json(self) -> dict:
        return {
            "tool": self.tool,
            "description": self.description,
            "target": None
            if self.target is None
            else [{"column": t.column, "row": t.row} for t in self.target],
        }


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    raw_text: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        return {"steps": [s.to_json() for s in self.steps], "raw_text": self.raw_text}

    @classmethod
    def from_json(cls, obj: dict) -> "Plan":
        steps = []
        for i, s in enumerate(obj.get("steps", [])):
            target = s.get("target")
            if target is not None:
                target = tuple(TargetRef(str(t["column"]), t.get("row")) for t in target)
            steps.append(PlanStep(i, str(s["tool"]).lower(), str(s.get("description", "")), target))
        return cls(tuple(steps), str(obj.get("raw_text", "")))


def _parse_tag_body(body: str) -> tuple[TargetRef, ...] | None:
    refs: list[TargetRef] = []
    for item in body.split(","):
        item = item.strip().strip("`'\"").strip()
        if not item:
            return None
        m = _ROW.match(item)
        if m:
            if not refs or refs[-1].row is not None:
                return None
            refs[-1] = TargetRef(refs[-1].column, int(m.group(1)))
        else:
            refs.append(TargetRef(item))
    return tuple(refs) or None


def _parse_target(text: str, schema: Sequence[str]) -> tuple[TargetRef, ...] | None:
    tags = list(_TAG.finditer(text))
    if not tags:
        return None
    refs = _parse_tag_body(tags[-1].group("body"))
    if refs is None:
        return None
    out = []
    for ref in refs:
        j = resolve_column(ref.column, schema)
        out.append(TargetRef(schema[j], ref.row) if j is not None else ref)
    return tuple(out)


def parse_plan(raw: str, schema: Sequence[str] = ()) -> Plan:
    """Split planner output into tool steps.

    A step starts on a line whose first word (after an optional step number or
    bullet) is a tool name; following lines without a tool name continue it.
    Column names that match ``schema`` are canonicalised to the schema spelling.
    """
    chunks: list[tuple[str, str]] = []
    for line in raw.splitlines():
        m = _STEP_START.match(line)
        if m:
            chunks.append((m.group("tool").lower(), line[m.end():].strip()))
        elif chunks and line.strip():
            tool, text = chunks[-1]
            chunks[-1] = (tool, f"{text} {line.strip()}".strip())
    steps = []
    for i, (tool, text) in enumerate(chunks):
        target = _parse_target(text, schema)
        if target is not None:
            tags = list(_TAG.finditer(text))
            last = tags[-1]
            text = text[: last.start()] + text[last.end():]
        steps.append(PlanStep(i, tool, " ".join(text.split()), target))
    return Plan(tuple(steps), raw)


def render_plan(plan: Plan) -> str:
    """Text form of a structured plan that ``parse_plan`` maps back to the same steps."""
    lines = []
    for i, step in enumerate(plan.steps, start=1):
        line = f"{i}. {step.tool.capitalize()}: {step.description}".rstrip()
        if step.target is not None:
            refs = [t.column if t.row is None else f"{t.column}, row {t.row}" for t in step.target]
            line += f" [target: {', '.join(refs)}]"
        lines.append(line)
    return "\n".join(lines)


def compile_mask(step: PlanStep | None, table: Table) -> CellMask:
    """Cells the step commits to. Falls back to the uniform mask on any failure."""
    if step is None or step.target is None:
        return CellMask.uniform(table.shape)
    bits = np.zeros(table.shape, dtype=np.uint8)
    for ref in step.target:
        j = resolve_column(ref.column, table.columns)
        if j is None:
            return CellMask.uniform(table.shape)
        if ref.row is None:
            bits[:, j] = 1
        elif 0 <= ref.row < table.n_rows:
            bits[ref.row, j] = 1
        else:
            return CellMask.uniform(table.shape)
    return CellMask(bits, MaskSource.PARSED)


def hallucination_rate(plan: Plan, schema: Sequence[str]) -> tuple[float, float]:
    """Column hallucination as ``(per_plan, per_step)``.

    ``per_step`` is the share of steps that are unparsed or name an off-schema
    column. ``per_plan`` is the share of all referenced column names that are
    off-schema.
    """
    if not plan.steps:
        return 0.0, 0.0
    bad_steps = 0
    names = 0
    bad_names = 0
    for step in plan.steps:
        if step.target is None:
            bad_steps += 1
            continue
        missing = [t for t in step.target if resolve_column(t.column, schema) is None]
        names += len(step.target)
        bad_names += len(missing)
        if missing:
            bad_steps += 1
    per_plan = bad_names / names if names else 0.0
    return per_plan, bad_steps / len(plan.steps)
