"""Trajectory diagnostics: error modes, plan bypass, answer-surface position, compression."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import stats
from .controller import TrajectoryRecord
from .engine import FINAL_ANSWER
from .rewards import match_answer


def error_mode_rates(records: Sequence[TrajectoryRecord]) -> dict:
    """Per-step shares of tool runtime errors, parse errors and final-answer actions."""
    steps = [s for r in records for s in r.steps]
    n = len(steps)
    if n == 0:
        return {"n_steps": 0, "other_error": None, "parse_error": None, "final_answer": None}
    final = sum(1 for s in steps if s.call and s.call["tool"] == FINAL_ANSWER)
    return {
        "n_steps": n,
        "other_error": sum(s.status == "tool_error" for s in steps) / n,
        "parse_error": sum(s.status == "parse_error" for s in steps) / n,
        "final_answer": final / n,
    }


def is_plan_bypass(record: TrajectoryRecord) -> bool:
    """The reasoner answered on step 1 although the plan had steps to follow."""
    return (
        len(record.plan.steps) > 0
        and record.halt_reason == "final_answer"
        and len(record.steps) == 1
    )


def answer_surface_position(record: TrajectoryRecord, gold: str, t_max: int = 6) -> float | None:
    """``(k - 1) / t_max`` for the first step ``k`` whose produced answer matches ``gold``.

    None when the gold answer never surfaces.
    """
    for s in record.steps:
        if s.candidate is not None and match_answer(s.candidate, gold):
            return s.index / t_max
    return None


def subgoal_balance(rho_a: Sequence[float], rho_b: Sequence[float]) -> dict:
    """Compare answer-surface positions of two systems with a Mann-Whitney U test."""
    res = stats.mann_whitney_u(list(rho_a), list(rho_b))
    return {
        "rho_a": float(np.mean(rho_a)), "rho_b": float(np.mean(rho_b)),
        "delta": float(np.mean(rho_a) - np.mean(rho_b)),
        "U": res.statistic, "p_two_sided": res.p_value, "p_less": res.p_less, "method": res.method,
    }


def compression(
    a: Sequence[TrajectoryRecord], b: Sequence[TrajectoryRecord], gold: Mapping[str, str] | None = None
) -> dict:
    """Matched-pair trajectory lengths (same record id in both runs) with a Wilcoxon test."""
    bmap = {r.id: r for r in b}
    pairs = [(r, bmap[r.id]) for r in sorted(a, key=lambda r: r.id) if r.id in bmap]
    out: dict = {"pairs": len(pairs)}
    if not pairs:
        return out
    la = [len(x.steps) for x, _ in pairs]
    lb = [len(y.steps) for _, y in pairs]
    out["steps_a"] = float(np.mean(la))
    out["steps_b"] = float(np.mean(lb))
    if gold is not None:
        out["acc_a"] = float(np.mean([match_answer(x.answer, gold.get(x.id, "")) for x, _ in pairs]))
        out["acc_b"] = float(np.mean([match_answer(y.answer, gold.get(y.id, "")) for _, y in pairs]))
    diffs = [p - q for p, q in zip(la, lb)]
    if any(diffs):
        res = stats.wilcoxon_signed_rank(diffs)
        out["wilcoxon"] = {"statistic": res.statistic, "p_two_sided": res.p_value, "n": res.n}
    else:
        out["wilcoxon"] = None
    return out
