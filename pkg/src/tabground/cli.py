"""Command-line entry point. Every subcommand prints a JSON report (or JSONL) to stdout or ``--out``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import pipelines
from .backends import BackendSpec, make_attention, make_planner, make_reasoner
from .controller import Backends, HaltConfig, run_trajectory
from .plan import Plan, parse_plan
from .rewards import TabRougeReward, tabrouge
from .table import Table, load_standards, parse_table, read_jsonl
from .theory import theory_checks
from .verifier import CalibrationParams, NullKind, fit_calibration

log = logging.getLogger("tabground")


def _emit(obj, out: str | None, jsonl: bool = False) -> None:
    if jsonl:
        text = "".join(json.dumps(o, sort_keys=True, ensure_ascii=False) + "\n" for o in obj)
    else:
        text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _attention(arg: str, seed: int):
    return make_attention(BackendSpec.parse(arg, role="attention"), seed)


def _load_table(path: str) -> Table:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return Table.from_dict(json.loads(text))
    return parse_table(text)


def cmd_run(args) -> int:
    tasks = read_jsonl(args.input)
    reasoner = make_reasoner(BackendSpec.parse(args.reasoner))
    attention = _attention(args.attention, args.seed)
    planner = make_planner(BackendSpec.parse(args.planner)) if args.planner else None
    halt = HaltConfig(args.halt_delta, args.halt_k, args.max_steps)
    calibration = CalibrationParams.load(args.calibration) if args.calibration else None
    rewards = [TabRougeReward()] if args.tabrouge else []
    records = []
    for task in tasks:
        rid = str(task.get("id", ""))
        table = Table.from_dict(task["table"])
        plan_seconds = None
        plan_src = task.get("plan")
        if isinstance(plan_src, dict):
            plan = Plan.from_json(plan_src)
        elif isinstance(plan_src, str):
            plan = parse_plan(plan_src, table.columns)
        elif planner is not None:
            t0 = time.perf_counter()
            raw = planner.plan(task["question"], table, rid)
            plan_seconds = time.perf_counter() - t0
            plan = parse_plan(raw, table.columns)
        else:
            plan = Plan(())
        rec = run_trajectory(
            task["question"], table, plan, Backends(reasoner, attention, planner), halt,
            record_id=rid, calibration=calibration, content_rewards=rewards,
            plan_seconds=plan_seconds, clock=None if args.no_timings else time.perf_counter,
        )
        records.append(rec.to_json(include_timings=not args.no_timings))
    _emit(records, args.out, jsonl=True)
    return 0


def cmd_eval_auroc(args) -> int:
    report = pipelines.eval_auroc(load_standards(args.standards), _attention(args.backend, args.seed), args.workers)
    _emit(report, args.out)
    return 0


def cmd_perm_stability(args) -> int:
    report = pipelines.eval_perm_stability(
        load_standards(args.standards), _attention(args.backend, args.seed), k=args.k, seed=args.seed,
        workers=args.workers,
    )
    _emit(report, args.out)
    return 0


def cmd_falsify(args) -> int:
    report = pipelines.eval_falsification(
        load_standards(args.standards), _attention(args.backend, args.seed), draws=args.draws, seed=args.seed,
        kinds=args.kinds, p_flip=args.p_flip, workers=args.workers,
    )
    _emit(report, args.out)
    return 0


def cmd_labelability(args) -> int:
    report = pipelines.eval_labelability(pipelines.load_labels(args.judge), pipelines.load_labels(args.human))
    _emit(report, args.out)
    return 0


def cmd_tabrouge(args) -> int:
    t = tabrouge(args.question, _load_table(args.table))
    _emit({"enc_len": t.enc_len, "lcs_len": t.lcs_len, "score": t.score}, args.out)
    return 0


def cmd_calibrate(args) -> int:
    samples = [(float(o["score"]), int(o["label"])) for o in read_jsonl(args.samples) if not o.get("excluded")]
    fit = fit_calibration(samples, args.train_frac, seed=args.seed, patience=args.patience)
    report = {
        **fit.params.to_json(),
        "train_bce": fit.train_bce, "heldout_bce": fit.heldout_bce, "iterations": fit.iterations,
        "n_train": fit.n_train, "n_heldout": fit.n_heldout,
    }
    if args.params_out:
        fit.params.save(args.params_out)
    _emit(report, args.out)
    return 0


def cmd_theory_check(args) -> int:
    report = theory_checks(args.seed, cases=args.cases, paths=args.paths)
    _emit(report.to_json(), args.out)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabground", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, workers=False):
        sp.add_argument("--out", help="write the report here instead of stdout")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if workers:
            sp.add_argument("--workers", type=int, default=4)
        return sp

    sp = common(sub.add_parser("run", help="run plan-guided trajectories (JSONL in, JSONL out)"))
    sp.add_argument("--input", required=True, help="JSONL tasks: id, question, table, optional plan")
    sp.add_argument("--reasoner", required=True, help="scripted:<calls.json> or http")
    sp.add_argument("--attention", default="scripted:uniform")
    sp.add_argument("--planner", help="scripted:<plans.json> or http; used when a task has no plan")
    sp.add_argument("--halt-delta", type=float, default=HaltConfig.delta_stag)
    sp.add_argument("--halt-k", type=int, default=HaltConfig.k_stag)
    sp.add_argument("--max-steps", type=int, default=HaltConfig.t_max)
    sp.add_argument("--calibration", help="calibration params JSON")
    sp.add_argument("--tabrouge", action="store_true", help="also log the TABROUGE content reward")
    sp.add_argument("--no-timings", action="store_true", help="omit wall-clock times (byte-stable output)")
    sp.set_defaults(func=cmd_run)

    sp = common(sub.add_parser("eval-auroc", help="cell-level AUROC against attention standards"), workers=True)
    sp.add_argument("--standards", required=True)
    sp.add_argument("--backend", required=True, help="scripted:oracle|uniform|peaked[:snr]|random|positional, cached:<jsonl>, http")
    sp.set_defaults(func=cmd_eval_auroc)

    sp = common(sub.add_parser("perm-stability", help="AUROC spread across row-permuted views"), workers=True)
    sp.add_argument("--standards", required=True)
    sp.add_argument("--backend", required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.set_defaults(func=cmd_perm_stability)

    sp = common(sub.add_parser("falsify", help="ground-truth vs density-preserving null masks"), workers=True)
    sp.add_argument("--standards", required=True)
    sp.add_argument("--backend", required=True)
    sp.add_argument("--draws", type=int, default=50)
    sp.add_argument("--kinds", nargs="+", default=[k.value for k in NullKind], choices=[k.value for k in NullKind])
    sp.add_argument("--p-flip", type=float, default=0.20)
    sp.set_defaults(func=cmd_falsify)

    sp = common(sub.add_parser("labelability", help="judge-vs-human agreement and kappa"), seed=False)
    sp.add_argument("--judge", required=True)
    sp.add_argument("--human", required=True)
    sp.set_defaults(func=cmd_labelability)

    sp = common(sub.add_parser("tabrouge", help="TABROUGE of a question against a table"), seed=False)
    sp.add_argument("--question", required=True)
    sp.add_argument("--table", required=True, help="table JSON or canonical serialized text")
    sp.set_defaults(func=cmd_tabrouge)

    sp = common(sub.add_parser("calibrate", help="fit the logistic calibration"))
    sp.add_argument("--samples", required=True, help='JSONL of {"score": float, "label": 0|1}')
    sp.add_argument("--train-frac", type=float, default=0.8)
    sp.add_argument("--patience", type=int, default=10)
    sp.add_argument("--params-out", help="write {slope, intercept} JSON here")
    sp.set_defaults(func=cmd_calibrate)

    sp = common(sub.add_parser("theory-check", help="randomized reward-theory checks"))
    sp.add_argument("--cases", type=int, default=500)
    sp.add_argument("--paths", type=int, default=10_000)
    sp.set_defaults(func=cmd_theory_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, TypeError) as e:
        msg = {"error": type(e).__name__, "message": str(e), "command": args.command}
        sys.stderr.write(json.dumps(msg) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
