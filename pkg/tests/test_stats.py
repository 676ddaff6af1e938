import itertools
import math
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabground.stats import (
    AllZeroDiffs, LengthMismatch, SingleClass, agreement, auroc, binomial_sd,
    cohens_kappa, macro_se, mann_whitney_u, perm_sigma, rankdata, wilcoxon_signed_rank,
)


def auroc_bruteforce(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def wilcoxon_enumeration(diffs):
    """One-sided p-values by listing all 2**n sign assignments of the rank vector."""
    d = [x for x in diffs if x != 0]
    ranks = rankdata([abs(x) for x in d])
    obs = sum(r for r, x in zip(ranks, d) if x > 0)
    ge = le = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = sum(r for r, s in zip(ranks, signs) if s)
        ge += w >= obs - 1e-9
        le += w <= obs + 1e-9
    return obs, ge / 2 ** len(d), le / 2 ** len(d)


def mwu_enumeration(x, y):
    pooled = list(x) + list(y)
    obs = sum((a > b) + 0.5 * (a == b) for a in x for b in y)
    ge = le = total = 0
    for idx in itertools.combinations(range(len(pooled)), len(x)):
        xs = [pooled[i] for i in idx]
        ys = [pooled[i] for i in range(len(pooled)) if i not in idx]
        u = sum((a > b) + 0.5 * (a == b) for a in xs for b in ys)
        total += 1
        ge += u >= obs
        le += u <= obs
    return obs, ge / total, le / total


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert auroc([1, 1, 1], [1, 0, 1]) == 0.5
    assert auroc([3, 2, 1], [1, 0, 0]) == 1.0
    with pytest.raises(SingleClass):
        auroc([1, 2], [1, 1])
    with pytest.raises(LengthMismatch):
        auroc([1], [1, 0])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=50))
def test_auroc_oracle_and_invariances(pairs):
    scores, labels = zip(*pairs)
    if len(set(labels)) < 2:
        return
    a = auroc(scores, labels)
    assert a == auroc_bruteforce(scores, labels)
    assert auroc([math.exp(s) for s in scores], labels) == a
    if len(set(scores)) == len(scores):
        assert a + auroc([-s for s in scores], labels) == pytest.approx(1.0)


def test_kappa_and_agreement():
    assert cohens_kappa(list("aabb"), list("aabb")) == 1.0
    # 2x2 counts: a yes/yes, b yes/no, c no/yes, d no/no
    a, b, c, d = 20, 5, 10, 15
    x = ["y"] * (a + b) + ["n"] * (c + d)
    y = ["y"] * a + ["n"] * b + ["y"] * c + ["n"] * d
    n = a + b + c + d
    p_o = (a + d) / n
    p_e = ((a + b) * (a + c) + (c + d) * (b + d)) / n ** 2
    assert cohens_kappa(x, y) == pytest.approx((p_o - p_e) / (1 - p_e))
    assert agreement(x, y) == pytest.approx(0.7)
    # chance agreement of 1 forces observed agreement of 1, so this is the only p_e = 1 case
    assert cohens_kappa(["a"] * 3, ["a"] * 3) == 1.0
    assert cohens_kappa(["a", "a"], ["b", "b"]) == 0.0
    with pytest.raises(LengthMismatch):
        cohens_kappa(["a"], ["a", "b"])


def test_kappa_independent_labels_near_zero():
    rng = np.random.default_rng(0)
    ks = [cohens_kappa(list(rng.integers(0, 2, 400)), list(rng.integers(0, 2, 400))) for _ in range(200)]
    # kappa SD is about 1/sqrt(n) = 0.05 for independent 50/50 raters
    assert abs(np.mean(ks)) < 3 * 0.05 / math.sqrt(200)


def test_binomial_volatility():
    assert binomial_sd(0.9412, 200) == pytest.approx(0.0166, abs=1e-4)
    assert binomial_sd(0.5, 200) == pytest.approx(0.0354, abs=1e-4)
    assert binomial_sd(0.0, 200) == binomial_sd(1.0, 200) == 0.0
    assert macro_se([0.5, 0.5], 200) == pytest.approx(binomial_sd(0.5, 200) / math.sqrt(2))
    with pytest.raises(ValueError):
        binomial_sd(1.2, 10)


def test_wilcoxon_examples():
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert r.method == "exact" and r.p_greater == 1 / 32 and r.statistic == 15
    assert wilcoxon_signed_rank([1, -1, 2, -2, 3, -3]).p_value == 1.0
    with pytest.raises(AllZeroDiffs):
        wilcoxon_signed_rank([0, 0])


def test_wilcoxon_exact_vs_approx_n25():
    rng = np.random.default_rng(5)
    d = rng.normal(0.3, 1, 25)
    exact = wilcoxon_signed_rank(d, "exact")
    approx = wilcoxon_signed_rank(d, "approx")
    assert abs(exact.p_value - approx.p_value) < 0.02
    assert wilcoxon_signed_rank(d).method == "approx"


@given(st.lists(st.integers(-4, 4), min_size=1, max_size=12))
def test_wilcoxon_exact_matches_enumeration(diffs):
    if not any(diffs):
        return
    r = wilcoxon_signed_rank(diffs, "exact")
    obs, pg, pl = wilcoxon_enumeration(diffs)
    assert r.statistic == obs and r.p_greater == pg and r.p_less == pl


def test_mann_whitney_examples():
    r = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert r.statistic == 0 and r.p_less == 1 / 20
    r = mann_whitney_u([1, 2, 2, 3], [3, 2, 2, 1])
    assert r.statistic == 8 and r.p_value == 1.0


@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_mann_whitney_exact_matches_enumeration(x, y):
    r = mann_whitney_u(x, y, "exact")
    obs, pg, pl = mwu_enumeration(x, y)
    assert r.statistic == obs and r.p_greater == pytest.approx(pg, abs=1e-15) and r.p_less == pytest.approx(pl, abs=1e-15)


def test_mann_whitney_approx_against_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(2)
    x, y = rng.normal(0, 1, 30).round(1), rng.normal(0.5, 1, 25).round(1)
    ours = mann_whitney_u(x, y)
    ref = scipy_stats.mannwhitneyu(x, y, method="asymptotic", use_continuity=True)
    assert ours.statistic == pytest.approx(ref.statistic)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-6)


def test_perm_sigma():
    assert perm_sigma([0.7] * 5) == 0.0
    assert perm_sigma([0.6, None, 0.7]) is None
    assert perm_sigma([0.6, 0.7, 0.8]) == pytest.approx(0.1)
    assert perm_sigma([0.6, 0.7, 0.8]) == statistics.stdev([0.6, 0.7, 0.8])
