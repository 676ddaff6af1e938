"""Pluggable planner, reasoner and attention backends.

Scripted backends are deterministic and cover every controller and pipeline
test. HTTP backends speak the OpenAI-compatible chat-completions protocol
(planner, reasoner) or a small JSON attention protocol (attention provider).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .engine import FINAL_ANSWER, TableState, ToolCall
from .plan import PlanStep
from .table import CellMask, Table, serialize, to_text
from .verifier import CellAttention

ENV_ENDPOINT = "TABGROUND_ENDPOINT"
ENV_MODEL = "TABGROUND_MODEL"
ENV_API_KEY = "TABGROUND_API_KEY"
ENV_ATTENTION_ENDPOINT = "TABGROUND_ATTENTION_ENDPOINT"


class BackendError(RuntimeError):
    """Transport failure, timeout, or an unusable backend response."""


@dataclass(frozen=True)
class ReasonerContext:
    question: str
    state: TableState
    step: PlanStep | None
    feedback: tuple[str, ...]
    step_index: int
    record_id: str = ""


class Planner(Protocol):
    def plan(self, question: str, table: Table, record_id: str = "") -> str: ...


class Reasoner(Protocol):
    def next_call(self, ctx: ReasonerContext) -> str | Mapping | ToolCall: ...


class AttentionProvider(Protocol):
    def attend(
        self, question: str, table: Table, *, mask: CellMask | None = None, record_id: str = ""
    ) -> CellAttention: ...


def stable_seed(*parts: Any) -> int:
    """Process-independent 64-bit seed from arbitrary printable parts."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def _hash_normal(*parts: Any) -> float:
    """Deterministic standard-normal draw keyed by ``parts`` (Box-Muller)."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=16).digest()
    u1 = (int.from_bytes(h[:8], "big") + 0.5) / 2**64
    u2 = int.from_bytes(h[8:], "big") / 2**64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2 * math.pi * u2)


# ---------------------------------------------------------------------------
# Scripted attention providers


class OracleAttention:
    """Attention equal to the mask (unit mass on every relevant cell)."""

    def attend(self, question, table, *, mask=None, record_id=""):
        if mask is None:
            return CellAttention(np.ones(table.shape), np.zeros(table.n_cols))
        return CellAttention(mask.bits.astype(float), np.zeros(table.n_cols))


class UniformAttention:
    def attend(self, question, table, *, mask=None, record_id=""):
        return CellAttention(np.ones(table.shape), np.zeros(table.n_cols))


class PeakedAttention:
    """Log-normal attention shifted by ``snr`` on masked cells.

    Cell noise is keyed by the question, the full row content and the column,
    so the attention follows rows when they are reordered (row-permutation
    equivariant). With ``snr = 0`` it is independent of the mask; the
    population AUROC against the mask is ``Phi(snr / sqrt(2))``.
    """

    def __init__(self, snr: float = 2.0, salt: str = ""):
        self.snr = float(snr)
        self.salt = salt

    def attend(self, question, table, *, mask=None, record_id=""):
        n_rows, n_cols = table.shape
        z = np.zeros(table.shape)
        for i, row in enumerate(table.rows):
            key = "\x1e".join(row)
            for j in range(n_cols):
                z[i, j] = _hash_normal(self.salt, question, key, j)
        if mask is not None:
            z = z + self.snr * mask.bits
        return CellAttention(np.exp(z), np.zeros(n_cols))


class PositionalAttention:
    """Attention keyed by (row position, column) only, blind to cell content.

    Reordering rows leaves this attention in place while the mask moves, which
    is the instability case for permutation-stability checks.
    """

    def __init__(self, salt: str = ""):
        self.salt = salt

    def attend(self, question, table, *, mask=None, record_id=""):
        z = np.array(
            [[_hash_normal(self.salt, record_id or question, i, j) for j in range(table.n_cols)]
             for i in range(table.n_rows)]
        ).reshape(table.shape)
        return CellAttention(np.exp(z), np.zeros(table.n_cols))


class CachedAttention:
    """Attention payloads looked up by record id (e.g. cached from a real model)."""

    def __init__(self, payloads: Mapping[str, Mapping]):
        self.payloads = dict(payloads)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "CachedAttention":
        from .table import read_jsonl

        return cls({str(o["id"]): o for o in read_jsonl(path)})

    def attend(self, question, table, *, mask=None, record_id=""):
        try:
            payload = self.payloads[record_id]
        except KeyError:
            raise BackendError(f"no cached attention for record {record_id!r}") from None
        _, index = serialize(table)
        try:
            return CellAttention.from_payload(payload, index=index, shape=table.shape)
        except ValueError as e:
            raise BackendError(f"bad cached attention for {record_id!r}: {e}") from None


class ScoreTargetAttention:
    """Per-step attention engineered to hit scripted overlap scores.

    Stateful, so use one instance per trajectory. Step ``k`` puts a fraction
    ``scores[k]`` of unit mass uniformly on the masked cells and the rest on
    unmasked cells. Masks covering the whole table (or none of it) cannot
    encode a score and get uniform attention.
    """

    def __init__(self, scores: Sequence[float]):
        self.scores = [float(s) for s in scores]
        self.calls = 0

    def attend(self, question, table, *, mask=None, record_id=""):
        k = min(self.calls, len(self.scores) - 1)
        self.calls += 1
        target = self.scores[k]
        if mask is None or mask.count in (0, mask.bits.size):
            return CellAttention(np.ones(table.shape), np.zeros(table.n_cols))
        bits = mask.bits.astype(float)
        on = bits / bits.sum() * target
        off = (1 - bits) / (1 - bits).sum() * (1 - target)
        return CellAttention(on + off, np.zeros(table.n_cols))


# ---------------------------------------------------------------------------
# Scripted reasoner / planner


class ScriptedReasoner:
    """Replays tool calls keyed by step index; per-record scripts optional.

    ``script`` is either a list (shared by every record) or a mapping from
    record id to list. Entries may be ToolCall JSON objects or raw strings,
    which go through the same parser as model output.
    """

    def __init__(self, script: Sequence | Mapping[str, Sequence]):
        self.script = script

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedReasoner":
        data = json.loads(Path(path).read_text())
        if isinstance(data, Mapping) and "calls" in data:
            data = data["calls"]
        return cls(data)

    def next_call(self, ctx: ReasonerContext):
        calls = self.script
        if isinstance(calls, Mapping):
            if ctx.record_id not in calls:
                raise BackendError(f"no scripted calls for record {ctx.record_id!r}")
            calls = calls[ctx.record_id]
        if ctx.step_index >= len(calls):
            raise BackendError(f"script exhausted at step {ctx.step_index}")
        return calls[ctx.step_index]


class ScriptedPlanner:
    def __init__(self, plans: str | Mapping[str, str]):
        self.plans = plans

    def plan(self, question: str, table: Table, record_id: str = "") -> str:
        if isinstance(self.plans, str):
            return self.plans
        return self.plans.get(record_id, "")


# ---------------------------------------------------------------------------
# HTTP backends

REASONER_SYSTEM = (
    "You answer questions about a table by calling one tool per turn. "
    "Tools: filter{column, op, value}, sort{column, direction}, aggregate{column, kind}, "
    "lookup{column, row}, compare{left:{column,row}, right:{column,row}}, select{columns}, "
    f"{FINAL_ANSWER}{{answer}}. Reply with a single JSON object "
    '{"tool": ..., "args": {...}} and nothing else.'
)

PLANNER_SYSTEM = (
    "Write a numbered tool-use plan for answering the question over the table. "
    "Each step starts with one of: Filter, Sort, Aggregate, Lookup, Compare, Select, "
    "and ends with a [target: column] tag, or [target: column, row N] for a single cell."
)


def extract_json_object(text: str) -> dict:
    """First top-level JSON object in ``text`` (tolerates code fences and prose)."""
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise ValueError("no JSON object found in model output")


@dataclass
class ChatClient:
    """Minimal OpenAI-compatible ``/chat/completions`` client."""

    endpoint: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    temperature: float = 0.0
    transport: httpx.BaseTransport | None = field(default=None, repr=False)

    def complete(self, messages: list[dict]) -> str:
        url = self.endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "messages": messages, "temperature": self.temperature}
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                resp = client.post(url, json=body, headers=headers)
                resp.raise_for_status()
                data = resp.json()
        except httpx.TimeoutException as e:
            raise BackendError(f"timeout calling {url}: {e}") from e
        except httpx.HTTPError as e:
            raise BackendError(f"transport error calling {url}: {e}") from e
        except json.JSONDecodeError as e:
            raise BackendError(f"non-JSON response from {url}") from e
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"unexpected chat-completions response shape from {url}") from None
        return content or ""


class HttpReasoner:
    def __init__(self, client: ChatClient):
        self.client = client

    def messages(self, ctx: ReasonerContext) -> list[dict]:
        parts = [f"Question: {ctx.question}", "Table:", to_text(ctx.state.table)]
        if ctx.step is not None:
            parts.append(f"Plan step {ctx.step.index + 1} ({ctx.step.tool}): {ctx.step.description}")
        parts.extend(ctx.feedback)
        return [{"role": "system", "content": REASONER_SYSTEM}, {"role": "user", "content": "\n".join(parts)}]

    def next_call(self, ctx: ReasonerContext) -> str:
        return self.client.complete(self.messages(ctx))


class HttpPlanner:
    def __init__(self, client: ChatClient):
        self.client = client

    def plan(self, question: str, table: Table, record_id: str = "") -> str:
        meta = f"Columns: {', '.join(table.columns)}\nRows: {table.n_rows}"
        return self.client.complete([
            {"role": "system", "content": PLANNER_SYSTEM},
            {"role": "user", "content": f"Question: {question}\n{meta}"},
        ])


class HttpAttention:
    """POSTs ``{"question", "table"}`` (canonical serialization) to an attention service.

    The service answers with ``{"per_cell", "per_header"}`` or ``{"spans"}``
    keyed against the same serialization.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.transport = transport

    def attend(self, question, table, *, mask=None, record_id=""):
        text, index = serialize(table)
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                resp = client.post(self.endpoint, json={"id": record_id, "question": question, "table": text})
                resp.raise_for_status()
                payload = resp.json()
        except httpx.HTTPError as e:
            raise BackendError(f"attention backend failed: {e}") from e
        except json.JSONDecodeError as e:
            raise BackendError("attention backend returned non-JSON") from e
        try:
            return CellAttention.from_payload(payload, index=index, shape=table.shape)
        except (ValueError, KeyError, TypeError) as e:
            raise BackendError(f"bad attention payload: {e}") from e


# ---------------------------------------------------------------------------
# Backend specs


@dataclass(frozen=True)
class BackendSpec:
    """``kind`` is ``scripted`` or ``http``; ``name`` selects a scripted flavour or file."""

    kind: str
    name: str = ""
    endpoint: str | None = None
    model: str | None = None
    timeout: float = 60.0
    api_key: str | None = None

    def __post_init__(self):
        if self.kind not in ("scripted", "http", "cached"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError(f"http backend needs an endpoint (set {ENV_ENDPOINT})")

    @classmethod
    def parse(cls, text: str, env: Mapping[str, str] | None = None, role: str = "reasoner") -> "BackendSpec":
        """Parse ``scripted:<name>``, ``cached:<path>`` or ``http[:<endpoint>]``."""
        env = os.environ if env is None else env
        kind, _, rest = text.partition(":")
        if kind == "http":
            default = env.get(ENV_ATTENTION_ENDPOINT) if role == "attention" else None
            endpoint = rest or default or env.get(ENV_ENDPOINT)
            model = env.get(ENV_MODEL)
            if role != "attention" and not model:
                raise ValueError(f"http backend needs a model name (set {ENV_MODEL})")
            return cls("http", endpoint=endpoint, model=model, api_key=env.get(ENV_API_KEY))
        if kind in ("scripted", "cached"):
            return cls(kind, name=rest)
        raise ValueError(f"backend must look like scripted:<name>, cached:<path> or http[:<url>], got {text!r}")


def make_attention(spec: BackendSpec, seed: int = 0) -> AttentionProvider:
    if spec.kind == "http":
        return HttpAttention(spec.endpoint, spec.timeout)
    if spec.kind == "cached":
        return CachedAttention.from_jsonl(spec.name)
    name, _, arg = spec.name.partition(":")
    if name == "oracle":
        return OracleAttention()
    if name == "uniform":
        return UniformAttention()
    if name == "peaked":
        return PeakedAttention(float(arg) if arg else 2.0, salt=str(seed))
    if name == "random":
        return PeakedAttention(0.0, salt=str(seed))
    if name == "positional":
        return PositionalAttention(salt=str(seed))
    raise ValueError(f"unknown scripted attention {spec.name!r} (oracle|uniform|peaked[:snr]|random|positional)")


def make_reasoner(spec: BackendSpec) -> Reasoner:
    if spec.kind == "http":
        return HttpReasoner(ChatClient(spec.endpoint, spec.model, spec.api_key, spec.timeout))
    if spec.kind == "scripted" and spec.name:
        return ScriptedReasoner.from_file(spec.name)
    raise ValueError("reasoner backend must be scripted:<script.json> or http")


def make_planner(spec: BackendSpec) -> Planner:
    if spec.kind == "http":
        return HttpPlanner(ChatClient(spec.endpoint, spec.model, spec.api_key, spec.timeout))
    if spec.kind == "scripted" and spec.name:
        data = json.loads(Path(spec.name).read_text())
        return ScriptedPlanner(data)
    raise ValueError("planner backend must be scripted:<plans.json> or http")

