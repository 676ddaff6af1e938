import json

import numpy as np
import pytest

from tabground.backends import (
    BackendError, OracleAttention, PeakedAttention, ScoreTargetAttention, ScriptedReasoner, UniformAttention,
)
from tabground.controller import (
    Backends, HaltConfig, TrajectoryRecord, coerce_call, feedback_line, halt_rule_holds, run_trajectory,
)
from tabground.engine import InvalidToolCall, ToolCall
from tabground.plan import parse_plan
from tabground.rewards import TabRougeReward
from tabground.table import Table
from tabground.verifier import CalibrationParams

PLAN_TEXT = "\n".join(f"{i}. Sort: by score [target: Score]" for i in range(1, 7))


def scored_table():
    return Table(("Name", "Score"), tuple((f"n{i}", str(i)) for i in range(6)))


def run(script, scores=None, attention=None, plan_text=PLAN_TEXT, halt=HaltConfig(), table=None, **kw):
    table = table or scored_table()
    plan = parse_plan(plan_text, table.columns)
    attention = attention or ScoreTargetAttention(scores)
    return run_trajectory("which name has the top score?", table, plan, Backends(ScriptedReasoner(script), attention),
                          halt, record_id="r1", clock=None, **kw)


SORT = {"tool": "sort", "args": {"column": "Score", "direction": "asc"}}


def test_stagnation_trace():
    rec = run([SORT] * 6, [0.50, 0.51, 0.515])
    assert rec.halt_reason == "stagnation" and len(rec.steps) == 3
    assert [round(s.score, 6) for s in rec.steps] == [0.5, 0.51, 0.515]
    assert len({s.state_hash for s in rec.steps}) == 1
    assert halt_rule_holds(rec, HaltConfig())


def test_improving_scores_do_not_stagnate():
    rec = run([SORT] * 6, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert rec.halt_reason == "step_cap" and len(rec.steps) == 6


def test_changing_hashes_never_stagnate():
    script = [{"tool": "sort", "args": {"column": "Score", "direction": d}} for d in ["desc", "asc"] * 3]
    rec = run(script, [0.5] * 6)
    assert rec.halt_reason == "step_cap" and len(rec.steps) == 6


def test_plan_bypass_shape():
    rec = run([{"tool": "f_final_answer", "args": {"answer": "n5"}}], [0.9])
    assert rec.halt_reason == "final_answer" and rec.answer == "n5" and len(rec.steps) == 1


def test_step_cap_answer_is_best_candidate():
    # after the lookup the table is 1x1 with no Score column: later sorts fail and
    # their masks fall back to uniform, so the only candidate is the lookup's cell
    lookup = {"tool": "lookup", "args": {"column": "Name", "row": 0}}
    rec = run([lookup] + [SORT] * 5, [0.3, 0.9, 0.9, 0.9, 0.9, 0.9], halt=HaltConfig(k_stag=10))
    assert rec.halt_reason == "step_cap"
    assert rec.answer == "n0"
    assert rec.steps[0].candidate == "n0"


def test_uniform_steps_are_excluded():
    rec = run([SORT] * 6, attention=UniformAttention(), plan_text="Sort: no tag here")
    assert rec.steps[0].mask_source == "uniform-fallback"
    assert all(s.excluded for s in rec.steps)
    # excluded steps never count as improvement, so the identical-hash run stagnates
    assert rec.halt_reason == "stagnation" and len(rec.steps) == 3


def test_parse_and_tool_errors_are_recorded():
    script = ["not json at all", {"tool": "lookup", "args": {"column": "Nope", "row": 0}},
              {"tool": "f_final_answer", "args": {"answer": "x"}}]
    rec = run(script, attention=OracleAttention())
    assert [s.status for s in rec.steps] == ["parse_error", "tool_error", "ok"]
    assert rec.steps[0].raw_call == "not json at all" and rec.steps[0].call is None
    assert rec.steps[1].reason.startswith("UnknownColumn")
    assert rec.steps[0].score == 1.0


def test_backend_error_halts():
    rec = run([SORT], [0.5], halt=HaltConfig(k_stag=5))
    assert rec.halt_reason == "backend_error" and "exhausted" in rec.error and len(rec.steps) == 1


def test_feedback_reaches_reasoner():
    seen = []

    class Spy:
        def next_call(self, ctx):
            seen.append(ctx.feedback)
            return SORT

    plan = parse_plan(PLAN_TEXT, ("Name", "Score"))
    run_trajectory("q", scored_table(), plan, Backends(Spy(), ScoreTargetAttention([0.1, 0.5, 0.9, 0.95])),
                   HaltConfig(t_max=3), clock=None)
    assert seen[0] == ()
    assert seen[1] == ("[verifier] step=1 score=0.100 rationale=10.0% of table attention on 6 target cells",)
    assert len(seen[2]) == 2


def test_calibration_and_content_rewards():
    rec = run([SORT] * 2, [0.5, 0.9], halt=HaltConfig(t_max=2), calibration=CalibrationParams(4.0, -2.0),
              content_rewards=[TabRougeReward()])
    assert rec.steps[0].r_attn == pytest.approx(0.5) and rec.steps[0].score == pytest.approx(0.5)
    assert rec.steps[1].score == pytest.approx(1 / (1 + np.exp(-1.6)))
    assert [r.name for r in rec.steps[0].rewards] == ["r_attn", "tabrouge"]


def test_record_round_trip_and_determinism():
    dumps = [run([SORT] * 6, [0.5, 0.51, 0.515]).dumps(include_timings=False) for _ in range(3)]
    assert dumps[0] == dumps[1] == dumps[2]
    rec = TrajectoryRecord.from_json(json.loads(dumps[0]))
    assert rec.dumps(include_timings=False) == dumps[0]


def test_coerce_call():
    assert coerce_call('Sure! ```json\n{"tool": "sort", "args": {"column": "A"}}\n```') == ToolCall("sort", {"column": "A"})
    with pytest.raises(InvalidToolCall):
        coerce_call(42)
    assert feedback_line(2, 0.12345, "x") == "[verifier] step=2 score=0.123 rationale=x"


def test_halt_config_validation():
    with pytest.raises(ValueError):
        HaltConfig(t_max=0)
    assert HaltConfig() == HaltConfig(0.02, 2, 6)


def test_fuzz_never_exceeds_cap():
    rng = np.random.default_rng(0)
    tools = [SORT, {"tool": "filter", "args": {"column": "Score", "op": ">", "value": "2"}},
             {"tool": "select", "args": {"columns": ["Name"]}}, {"tool": "lookup", "args": {"column": "Score", "row": 9}},
             "garbage", {"tool": "f_final_answer", "args": {"answer": "1"}}]
    for k in range(50):
        script = [tools[int(i)] for i in rng.integers(0, len(tools), 10)]
        rec = run(script, attention=PeakedAttention(1.0, salt=str(k)))
        assert len(rec.steps) <= 6
        assert halt_rule_holds(rec, HaltConfig())
