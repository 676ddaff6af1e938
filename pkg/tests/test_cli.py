import json

import numpy as np
import pytest

from tabground.cli import build_parser, main
from tabground.controller import HaltConfig
from tabground.table import write_jsonl

from conftest import random_standard


@pytest.fixture
def standards_file(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "s.jsonl"
    write_jsonl(path, [random_standard(rng, f"r{i}").to_json() for i in range(6)])
    return path


def test_eval_auroc_oracle(standards_file, capsys):
    assert main(["eval-auroc", "--standards", str(standards_file), "--backend", "scripted:oracle"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["overall"]["mean"] == 1.0


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["eval-auroc", "--standards", str(tmp_path / "nope.jsonl"), "--backend", "scripted:oracle"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError" and err["command"] == "eval-auroc"


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["eval-auroc"])
    assert e.value.code == 2


def test_run_defaults_match_halt_config():
    args = build_parser().parse_args(["run", "--input", "x", "--reasoner", "scripted:y"])
    assert HaltConfig(args.halt_delta, args.halt_k, args.max_steps) == HaltConfig()


def test_run_is_byte_stable(tmp_path):
    table = {"columns": ["Name", "Score"], "rows": [["a", "1"], ["b", "2"]]}
    tasks = tmp_path / "tasks.jsonl"
    write_jsonl(tasks, [{"id": "t1", "question": "top?", "table": table},
                        {"id": "t2", "question": "top?", "table": table, "plan": "Sort: x [target: Score]"}])
    script = tmp_path / "calls.json"
    script.write_text(json.dumps({
        "t1": [{"tool": "sort", "args": {"column": "Score", "direction": "desc"}},
               {"tool": "f_final_answer", "args": {"answer": "b"}}],
        "t2": [{"tool": "f_final_answer", "args": {"answer": "b"}}],
    }))
    plans = tmp_path / "plans.json"
    plans.write_text(json.dumps({"t1": "1. Sort: by score [target: Score]\n2. Lookup: top [target: Name, row 0]"}))
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}.jsonl"
        argv = ["run", "--input", str(tasks), "--reasoner", f"scripted:{script}", "--planner", f"scripted:{plans}",
                "--attention", "scripted:peaked:2", "--no-timings", "--tabrouge", "--out", str(out)]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    recs = [json.loads(line) for line in outs[0].decode().splitlines()]
    assert [r["halt_reason"] for r in recs] == ["final_answer", "final_answer"]
    assert len(recs[0]["plan"]["steps"]) == 2 and "wall_times" not in recs[0]


def test_falsify_perm_and_theory(standards_file, tmp_path, capsys):
    assert main(["falsify", "--standards", str(standards_file), "--backend", "scripted:peaked:2", "--draws", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["p_flip"] == 0.2 and rep["n_ok"] == 6
    assert main(["perm-stability", "--standards", str(standards_file), "--backend", "scripted:positional"]) == 0
    assert json.loads(capsys.readouterr().out)["k"] == 5
    assert main(["theory-check", "--cases", "50", "--paths", "10000"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_tabrouge_calibrate_labelability(tmp_path, capsys):
    tpath = tmp_path / "t.json"
    tpath.write_text(json.dumps({"columns": ["a"], "rows": [["x"]]}))
    assert main(["tabrouge", "--question", "a x", "--table", str(tpath)]) == 0
    assert json.loads(capsys.readouterr().out) == {"enc_len": 9, "lcs_len": 2, "score": 2 / 9}

    samples = tmp_path / "cal.jsonl"
    write_jsonl(samples, [{"score": 0.9, "label": 1}] * 10 + [{"score": 0.1, "label": 0}] * 10
                + [{"score": 0.5, "label": 0, "excluded": True}])
    params = tmp_path / "params.json"
    assert main(["calibrate", "--samples", str(samples), "--params-out", str(params)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["slope"] > 0 and rep["n_train"] + rep["n_heldout"] == 20
    assert set(json.loads(params.read_text())) == {"slope", "intercept"}

    labels = tmp_path / "l.jsonl"
    write_jsonl(labels, [{"id": "1", "dataset": "d", "unit": "cell", "label": "y"},
                         {"id": "2", "dataset": "d", "unit": "cell", "label": "n"}])
    assert main(["labelability", "--judge", str(labels), "--human", str(labels)]) == 0
    assert json.loads(capsys.readouterr().out)["cell"]["kappa"] == 1.0
