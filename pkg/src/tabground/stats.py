"""Small-sample statistics: AUROC, agreement and kappa, rank tests, binomial volatility.

Rank tests carry exact branches (complete enumeration of the permutation
distribution, ties included) and tie-corrected normal approximations with a
continuity correction for larger samples. Every p-value is reported
two-sided and in both one-sided directions.
"""

from __future__ import annotations

import itertools
import math
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence


class SingleClass(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class DegenerateMarginals(ValueError):
    pass


class AllZeroDiffs(ValueError):
    pass


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties assigned their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(score of a positive > score of a negative) + half the tie probability."""
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for l in labels if l)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both positive and negative labels")
    ranks = rankdata(list(scores))
    r_pos = sum(r for r, l in zip(ranks, labels) if l)
    return (r_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def agreement(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} labels")
    if not a:
        raise ValueError("agreement needs at least one decision")
    return sum(x == y for x, y in zip(a, b)) / len(a)


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    p_o = agreement(a, b)
    n = len(a)
    ca, cb = Counter(a), Counter(b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateMarginals("chance agreement is 1 but observed agreement is not")
    return (p_o - p_e) / (1 - p_e)


def binomial_sd(p: float, n: int) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt(p * (1 - p) / n)


def macro_se(ps: Sequence[float], n: int) -> float:
    """Standard error of the mean of ``k`` independent binomial proportions."""
    if not ps:
        raise ValueError("need at least one proportion")
    return math.sqrt(sum(p * (1 - p) / n for p in ps)) / len(ps)


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    p_greater: float
    p_less: float
    n: int
    method: str


def _two_sided(p_greater: float, p_less: float) -> float:
    return min(1.0, 2 * min(p_greater, p_less))


def _signed_rank_distribution(doubled_ranks: Sequence[int]) -> dict[int, int]:
    """Counts of each attainable doubled W+ over all 2**n sign assignments."""
    dist = {0: 1}
    for r in doubled_ranks:
        nxt: dict[int, int] = {}
        for s, c in dist.items():
            nxt[s] = nxt.get(s, 0) + c
            nxt[s + r] = nxt.get(s + r, 0) + c
        dist = nxt
    return dist


def wilcoxon_signed_rank(diffs: Sequence[float], method: str = "auto") -> TestResult:
    """Signed-rank test on paired differences; statistic is W+ (sum of positive ranks).

    Zero differences are dropped. ``method`` is ``"exact"`` (full sign-flip
    distribution, exact under ties), ``"approx"`` (normal with tie and
    continuity corrections) or ``"auto"`` (exact for n <= 20).
    """
    d = [float(x) for x in diffs if x != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDiffs("every difference is zero")
    ranks = rankdata([abs(x) for x in d])
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    if method == "auto":
        method = "exact" if n <= 20 else "approx"
    if method == "exact":
        doubled = [int(round(2 * r)) for r in ranks]
        dist = _signed_rank_distribution(doubled)
        obs = int(round(2 * w_plus))
        total = 2 ** n
        p_greater = sum(c for s, c in dist.items() if s >= obs) / total
        p_less = sum(c for s, c in dist.items() if s <= obs) / total
    elif method == "approx":
        mean = n * (n + 1) / 4
        ties = Counter(abs(x) for x in d).values()
        var = n * (n + 1) * (2 * n + 1) / 24 - sum(t ** 3 - t for t in ties) / 48
        if var <= 0:
            p_greater = p_less = 1.0
        else:
            sd = math.sqrt(var)
            p_greater = _norm_sf((w_plus - mean - 0.5) / sd)
            p_less = _norm_sf((mean - w_plus - 0.5) / sd)
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestResult(w_plus, _two_sided(p_greater, p_less), min(p_greater, 1.0), min(p_less, 1.0), n, method)


def _u_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    ranks = rankdata(list(x) + list(y))
    n1 = len(x)
    return sum(ranks[:n1]) - n1 * (n1 + 1) / 2


def mann_whitney_u(x: Sequence[float], y: Sequence[float], method: str = "auto") -> TestResult:
    """Mann-Whitney U for ``x`` against ``y``.

    U counts pairs with x > y plus half the ties, so ``p_greater`` tests
    whether ``x`` tends to exceed ``y``. Exact enumeration over all splits of
    the pooled sample when ``len(x) + len(y) <= 12`` under ``"auto"``.
    """
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    u = _u_statistic(x, y)
    if method == "auto":
        method = "exact" if n1 + n2 <= 12 else "approx"
    if method == "exact":
        pooled = list(x) + list(y)
        ranks = rankdata(pooled)
        doubled_obs = int(round(2 * u))
        base = n1 * (n1 + 1)
        ge = le = total = 0
        for idx in itertools.combinations(range(n1 + n2), n1):
            s = int(round(2 * sum(ranks[i] for i in idx))) - base
            total += 1
            ge += s >= doubled_obs
            le += s <= doubled_obs
        p_greater, p_less = ge / total, le / total
    elif method == "approx":
        n = n1 + n2
        mean = n1 * n2 / 2
        ties = Counter(list(x) + list(y)).values()
        var = n1 * n2 / 12 * ((n + 1) - sum(t ** 3 - t for t in ties) / (n * (n - 1)))
        if var <= 0:
            p_greater = p_less = 1.0
        else:
            sd = math.sqrt(var)
            p_greater = _norm_sf((u - mean - 0.5) / sd)
            p_less = _norm_sf((mean - u - 0.5) / sd)
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestResult(u, _two_sided(p_greater, p_less), min(p_greater, 1.0), min(p_less, 1.0), n1 + n2, method)


def perm_sigma(aurocs: Sequence[float | None], min_valid: int = 3) -> float | None:
    """Sample SD of per-ordering AUROCs; None (rejected) below ``min_valid`` valid values."""
    valid = [a for a in aurocs if a is not None and not math.isnan(a)]
    if len(valid) < min_valid:
        return None
    return statistics.stdev(valid)
