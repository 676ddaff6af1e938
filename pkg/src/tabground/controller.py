"""Grounded trajectory execution with attention feedback and a stagnation halt."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .backends import AttentionProvider, BackendError, Planner, Reasoner, ReasonerContext, extract_json_object
from .engine import InvalidToolCall, StepOutcome, TableState, ToolCall, execute, state_hash
from .plan import Plan, compile_mask
from .rewards import RewardSignal, StepReward
from .table import Table
from .verifier import CalibrationParams, ShapeMismatch, is_informative, r_attn

log = logging.getLogger(__name__)

HALT_REASONS = ("final_answer", "stagnation", "step_cap", "backend_error")


@dataclass(frozen=True)
class HaltConfig:
    delta_stag: float = 0.02
    k_stag: int = 2
    t_max: int = 6

    def __post_init__(self):
        if self.delta_stag < 0 or self.k_stag < 1 or self.t_max < 1:
            raise ValueError(f"invalid halt config {self}")


@dataclass
class Backends:
    reasoner: Reasoner
    attention: AttentionProvider
    planner: Planner | None = None


@dataclass
class StepEntry:
    index: int
    call: dict | None
    status: str
    reason: str
    state_hash: str
    mask_source: str
    r_attn: float
    score: float
    excluded: bool
    rewards: list[RewardSignal] = field(default_factory=list)
    candidate: str | None = None
    raw_call: str | None = None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "call": self.call,
            "raw_call": self.raw_call,
            "status": self.status,
            "reason": self.reason,
            "state_hash": self.state_hash,
            "mask_source": self.mask_source,
            "r_attn": self.r_attn,
            "score": self.score,
            "excluded": self.excluded,
            "rewards": [r.to_json() for r in self.rewards],
            "candidate": self.candidate,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepEntry":
        return cls(
            index=obj["index"], call=obj.get("call"), status=obj["status"], reason=obj.get("reason", ""),
            state_hash=obj["state_hash"], mask_source=obj["mask_source"], r_attn=obj["r_attn"],
            score=obj["score"], excluded=obj["excluded"],
            rewards=[RewardSignal.from_json(r) for r in obj.get("rewards", [])],
            candidate=obj.get("candidate"), raw_call=obj.get("raw_call"),
        )


@dataclass
class TrajectoryRecord:
    id: str
    question: str
    table: Table
    plan: Plan
    steps: list[StepEntry]
    halt_reason: str
    answer: str
    wall_times: dict[str, float | None] = field(default_factory=dict)
    error: str | None = None

    def to_json(self, include_timings: bool = True) -> dict:
        out = {
            "id": self.id,
            "question": self.question,
            "table": self.table.to_dict(),
            "plan": self.plan.to_json(),
            "steps": [s.to_json() for s in self.steps],
            "halt_reason": self.halt_reason,
            "answer": self.answer,
            "error": self.error,
        }
        if include_timings:
            out["wall_times"] = dict(self.wall_times)
        return out

    def dumps(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_json(include_timings), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict) -> "TrajectoryRecord":
        return cls(
            id=obj["id"], question=obj["question"], table=Table.from_dict(obj["table"]),
            plan=Plan.from_json(obj["plan"]), steps=[StepEntry.from_json(s) for s in obj["steps"]],
            halt_reason=obj["halt_reason"], answer=obj["answer"],
            wall_times=obj.get("wall_times", {}), error=obj.get("error"),
        )


def coerce_call(raw) -> ToolCall:
    """Turn backend output (ToolCall, JSON object, or model text) into a ToolCall."""
    if isinstance(raw, ToolCall):
        return raw
    if isinstance(raw, Mapping):
        return ToolCall.from_json(raw)
    if isinstance(raw, str):
        try:
            obj = extract_json_object(raw)
        except ValueError as e:
            raise InvalidToolCall(str(e)) from None
        return ToolCall.from_json(obj)
    raise InvalidToolCall(f"cannot interpret reasoner output of type {type(raw).__name__}")


def feedback_line(step: int, score: float, rationale: str) -> str:
    return f"[verifier] step={step} score={score:.3f} rationale={rationale}"


def _candidate(outcome: StepOutcome) -> str | None:
    if outcome.terminal:
        return outcome.answer
    t = outcome.state.table
    if outcome.error is None and t.shape == (1, 1):
        return t.rows[0][0]
    return None


def run_trajectory(
    question: str,
    table: Table,
    plan: Plan,
    backends: Backends,
    halt: HaltConfig = HaltConfig(),
    *,
    record_id: str = "",
    calibration: CalibrationParams | None = None,
    content_rewards: Sequence[StepReward] = (),
    header_credit: bool = True,
    plan_seconds: float | None = None,
    clock: Callable[[], float] | None = time.perf_counter,
) -> TrajectoryRecord:
    """Execute one plan-guided trajectory.

    Each step compiles the plan step's mask against the current table, asks
    the reasoner for a tool call, executes it, and scores the reasoner's
    attention over the current table against the mask. Steps whose mask is a
    uniform fallback or whose attention mass is ~0 are flagged ``excluded``;
    they never raise the best score. The run halts on a final answer, after
    ``k_stag`` consecutive steps that neither beat the best score by more than
    ``delta_stag`` nor change the table, or at ``t_max`` steps. On the last two
    the answer comes from the best-scoring step that produced one.
    """
    start = clock() if clock else None
    state = TableState(table)
    prev_hash = state_hash(state)
    best: float | None = None
    stagnant = 0
    best_candidate: tuple[tuple, str] | None = None
    feedback: list[str] = []
    entries: list[StepEntry] = []
    halt_reason = "step_cap"
    answer = ""
    error = None

    for t in range(halt.t_max):
        step = plan.steps[t] if t < len(plan.steps) else None
        mask = compile_mask(step, state.table)
        ctx = ReasonerContext(question, state, step, tuple(feedback), t, record_id)
        try:
            raw = backends.reasoner.next_call(ctx)
        except BackendError as e:
            halt_reason, error = "backend_error", str(e)
            break

        raw_text = None
        try:
            call = coerce_call(raw)
            outcome = execute(state, call)
            call_json = call.to_json()
            status, reason = outcome.status, outcome.error or ""
            if outcome.error:
                reason = f"{outcome.error}: {outcome.reason}"
        except InvalidToolCall as e:
            outcome = StepOutcome(TableState(state.table, state.step_index + 1), error="ParseError", reason=str(e))
            call_json, status, reason = None, "parse_error", str(e)
            raw_text = raw if isinstance(raw, str) else json.dumps(raw, sort_keys=True, default=str)

        try:
            attn = backends.attention.attend(question, state.table, mask=mask, record_id=record_id)
            raw_score = r_attn(attn, mask, header_credit)
        except (BackendError, ShapeMismatch) as e:
            halt_reason, error = "backend_error", str(e)
            break
        informative = is_informative(attn, mask)
        score = float(calibration(raw_score)) if calibration else raw_score

        if not informative:
            rationale = "uniform mask, target unparsed" if mask.is_uniform else "no table attention mass"
            rationale += "; uninformative"
        else:
            rationale = f"{raw_score:.1%} of table attention on {mask.count} target cells"
        if status != "ok":
            rationale += f"; {status}={reason.split(':')[0]}"
        signals = [RewardSignal("r_attn", score, rationale)]
        signals += [reward(question, outcome.state) for reward in content_rewards]

        new_hash = state_hash(outcome.state)
        improved = informative and (best is None or score - best > halt.delta_stag)
        if t > 0 and not improved and new_hash == prev_hash:
            stagnant += 1
        else:
            stagnant = 0
        if informative:
            best = score if best is None else max(best, score)

        cand = _candidate(outcome)
        if cand is not None:
            key = (1 if informative else 0, score)
            if best_candidate is None or key > best_candidate[0]:
                best_candidate = (key, cand)

        entries.append(StepEntry(
            index=t, call=call_json, status=status, reason=reason, state_hash=f"{new_hash:016x}",
            mask_source=mask.source.value, r_attn=raw_score, score=score, excluded=not informative,
            rewards=signals, candidate=cand, raw_call=raw_text,
        ))
        feedback.append(feedback_line(t + 1, score, rationale))
        log.debug("record %s step %d: %s score=%.3f", record_id, t + 1, status, score)

        if outcome.terminal:
            halt_reason, answer = "final_answer", outcome.answer
            break
        if stagnant >= halt.k_stag:
            halt_reason = "stagnation"
            break
        state = outcome.state
        prev_hash = new_hash

    if halt_reason in ("stagnation", "step_cap") and best_candidate is not None:
        answer = best_candidate[1]
    wall = {"plan": plan_seconds, "reason": (clock() - start) if clock else None}
    return TrajectoryRecord(record_id, question, table, plan, entries, halt_reason, answer, wall, error)


def halt_rule_holds(record: TrajectoryRecord, halt: HaltConfig) -> bool:
    """Check the stagnation postcondition on a finished record."""
    if record.halt_reason != "stagnation":
        return True
    tail = record.steps[-halt.k_stag:]
    if len(tail) < halt.k_stag or len(record.steps) < halt.k_stag + 1:
        return False
    hashes = {s.state_hash for s in record.steps[-halt.k_stag - 1:]}
    if len(hashes) != 1:
        return False
    best = -math.inf
    ok = True
    for i, s in enumerate(record.steps):
        if i >= len(record.steps) - halt.k_stag:
            ok &= s.excluded or s.score - best <= halt.delta_stag
        if not s.excluded:
            best = max(best, s.score)
    return ok
