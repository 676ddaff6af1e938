"""Randomized checks of the reward-theory properties.

* variance growth: an unbiased (martingale) loss process has nondecreasing
  variance in the number of steps;
* parsimony of lexical coverage: deleting tokens outside an LCS alignment
  strictly raises TABROUGE, and appending content raises it exactly when the
  content's marginal LCS density beats the current score;
* pruning monotonicity: dropping rows that contribute nothing to the LCS
  never lowers TABROUGE.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .rewards import lcs_alignment, tabrouge, tabrouge_tokens, tokenize
from .table import Table, to_text


@dataclass
class Check:
    name: str
    passed: bool
    cases: int
    failures: int = 0
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "cases": self.cases,
                "failures": self.failures, "detail": self.detail}


@dataclass
class TheoryReport:
    seed: int
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "checks": [c.to_json() for c in self.checks]}


def lcs_bruteforce(a: list[str], b: list[str]) -> int:
    """LCS length by enumerating subsequences of the shorter sequence (short inputs only)."""
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            it = iter(b)
            if all(any(a[i] == y for y in it) for i in idx):
                return k
    return 0


def variance_growth(seed: int = 0, paths: int = 10_000, steps: int = 8, sigma: float = 1.0) -> Check:
    rng = np.random.default_rng(seed)
    y = np.cumsum(rng.normal(0.0, sigma, size=(paths, steps)), axis=1)
    var = y.var(axis=0, ddof=1)
    expected = sigma**2 * np.arange(1, steps + 1)
    # standard error of a Gaussian sample variance
    se = expected * math.sqrt(2.0 / (paths - 1))
    monotone = bool(np.all(np.diff(var) >= 0))
    within = bool(np.all(np.abs(var - expected) <= 2 * se))
    return Check(
        "variance_growth", monotone and within, steps,
        failures=int(np.sum(np.abs(var - expected) > 2 * se)) + int(np.sum(np.diff(var) < 0)),
        detail={"var": var.round(6).tolist(), "expected": expected.tolist(), "se": se.round(6).tolist(),
                "monotone": monotone, "within_2se": within},
    )


def _random_tokens(rng: np.random.Generator, vocab: list[str], lo: int, hi: int) -> list[str]:
    return [vocab[i] for i in rng.integers(0, len(vocab), size=int(rng.integers(lo, hi + 1)))]


def deletion_direction(seed: int = 0, cases: int = 500) -> Check:
    rng = np.random.default_rng(seed)
    vocab = list("abcdef")
    done = failures = 0
    while done < cases:
        q = _random_tokens(rng, vocab, 1, 6)
        enc = _random_tokens(rng, vocab, 2, 8)
        align = lcs_alignment(q, enc)
        used = {j for _, j in align}
        free = [j for j in range(len(enc)) if j not in used]
        if not align or not free:
            continue
        k = int(rng.integers(1, len(free) + 1))
        drop = set(rng.choice(free, size=k, replace=False).tolist())
        kept = [t for j, t in enumerate(enc) if j not in drop]
        before, after = tabrouge_tokens(q, enc), tabrouge_tokens(q, kept)
        oracle_ok = lcs_bruteforce(q, enc) == before.lcs_len and lcs_bruteforce(q, kept) == after.lcs_len
        if not (oracle_ok and after.lcs_len == before.lcs_len and after.score > before.score):
            failures += 1
        done += 1
    return Check("deletion_strict_increase", failures == 0, cases, failures)


def append_direction(seed: int = 0, cases: int = 500) -> Check:
    """Appending raises the score iff marginal density exceeds it (lowers it iff below)."""
    rng = np.random.default_rng(seed + 1)
    vocab = list("abcdef")
    failures = 0
    counts = {"above": 0, "below": 0, "equal": 0}
    for _ in range(cases):
        q = _random_tokens(rng, vocab, 1, 6)
        enc = _random_tokens(rng, vocab, 1, 8)
        gamma = _random_tokens(rng, vocab, 1, 4)
        base = tabrouge_tokens(q, enc)
        plus = tabrouge_tokens(q, enc + gamma)
        if lcs_bruteforce(q, enc + gamma) != plus.lcs_len:
            failures += 1
            continue
        # compare delta/|gamma| against c/L without division
        lhs = (plus.lcs_len - base.lcs_len) * base.enc_len
        rhs = base.lcs_len * len(gamma)
        if lhs > rhs:
            counts["above"] += 1
            failures += not plus.score > base.score
        elif lhs < rhs:
            counts["below"] += 1
            failures += not plus.score < base.score
        else:
            counts["equal"] += 1
            failures += not math.isclose(plus.score, base.score)
    return Check("append_density_condition", failures == 0, cases, failures, counts)


def pruning_monotone(seed: int = 0, cases: int = 500) -> Check:
    """Drop rows whose tokens take no part in an LCS alignment; the score must not fall."""
    rng = np.random.default_rng(seed + 2)
    vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"]
    done = failures = strict = 0
    while done < cases:
        n_rows, n_cols = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        cols = [f"c{j}" for j in range(n_cols)]
        rows = [[vocab[int(rng.integers(0, len(vocab)))] for _ in cols] for _ in range(n_rows)]
        table = Table(tuple(cols), tuple(tuple(r) for r in rows))
        question = " ".join(_random_tokens(rng, vocab, 1, 4))
        lines = [tokenize(line) for line in to_text(table).split("\n")]
        q, enc = tokenize(question), [t for line in lines for t in line]
        used = {j for _, j in lcs_alignment(q, enc)}
        offsets = np.cumsum([0] + [len(line) for line in lines]).tolist()
        # data row i is text line i + 2
        idle = [i for i in range(n_rows) if not any(offsets[i + 2] <= j < offsets[i + 3] for j in used)]
        if not idle:
            continue
        drop = set(rng.choice(idle, size=int(rng.integers(1, len(idle) + 1)), replace=False).tolist())
        pruned = Table(table.columns, tuple(r for i, r in enumerate(table.rows) if i not in drop))
        before, after = tabrouge(question, table), tabrouge(question, pruned)
        pruned_enc = tokenize(to_text(pruned))
        if lcs_bruteforce(q, enc) != before.lcs_len or lcs_bruteforce(q, pruned_enc) != after.lcs_len:
            failures += 1
        if after.score < before.score or after.lcs_len != before.lcs_len:
            failures += 1
        if before.lcs_len > 0 and not after.score > before.score:
            failures += 1
        strict += before.lcs_len > 0
        done += 1
    return Check("pruning_non_decrease", failures == 0, cases, failures, {"strict_cases": strict})


def theory_checks(seed: int = 0, cases: int = 500, paths: int = 10_000) -> TheoryReport:
    return TheoryReport(seed, [
        variance_growth(seed, paths),
        deletion_direction(seed, cases),
        append_direction(seed, cases),
        pruning_monotone(seed, cases),
    ])
