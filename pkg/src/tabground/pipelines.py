"""Evaluation pipelines over attention standards and label files.

Records are processed on a bounded thread pool; every report lists records
sorted by id so worker scheduling never changes the output.
"""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from . import stats
from .backends import AttentionProvider, BackendError, stable_seed
from .table import AttentionStandard, permute_rows, read_jsonl
from .verifier import EPS, EmptyMask, NullKind, NullMaskSpec, ShapeMismatch, falsification_ratio, noise_mask, r_attn

T = TypeVar("T")
R = TypeVar("R")


def _map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sorted(standards: Iterable[AttentionStandard]) -> list[AttentionStandard]:
    return sorted(standards, key=lambda s: (s.id, s.dataset, s.question))


def _mean(xs: Sequence[float]) -> float | None:
    return float(np.mean(xs)) if xs else None


def record_auroc(attn_scores: np.ndarray, mask_bits: np.ndarray) -> float:
    """Cell-level AUROC of attention against the relevance mask (headers excluded)."""
    return stats.auroc(attn_scores.ravel().tolist(), mask_bits.ravel().astype(int).tolist())


def _attend_auroc(provider: AttentionProvider, rec: AttentionStandard, table, mask) -> tuple[float | None, str]:
    if mask.count in (0, mask.bits.size):
        return None, "single-class mask"
    try:
        attn = provider.attend(rec.question, table, mask=mask, record_id=rec.id)
    except BackendError as e:
        return None, f"backend error: {e}"
    if attn.shape != mask.shape:
        return None, f"attention shape {attn.shape} != mask shape {mask.shape}"
    return record_auroc(attn.scores, mask.bits), ""


def _per_dataset(rows: list[dict], key: str) -> dict[str, dict]:
    groups: dict[str, list[float]] = defaultdict(list)
    counts: dict[str, int] = defaultdict(int)
    for r in rows:
        counts[r["dataset"]] += 1
        if r[key] is not None:
            groups[r["dataset"]].append(r[key])
    return {
        d: {"mean": _mean(groups[d]), "n_valid": len(groups[d]), "n": counts[d]}
        for d in sorted(counts)
    }


def eval_auroc(standards: Sequence[AttentionStandard], provider: AttentionProvider, workers: int = 4) -> dict:
    recs = _sorted(standards)

    def one(rec: AttentionStandard) -> dict:
        value, why = _attend_auroc(provider, rec, rec.table, rec.mask)
        return {"id": rec.id, "dataset": rec.dataset, "auroc": value,
                "status": "ok" if value is not None else "invalid", "reason": why}

    rows = _map(one, recs, workers)
    valid = [r["auroc"] for r in rows if r["auroc"] is not None]
    return {
        "records": rows,
        "per_dataset": _per_dataset(rows, "auroc"),
        "overall": {"mean": _mean(valid), "n_valid": len(valid), "n": len(rows)},
    }


def row_permutations(record_id: str, n_rows: int, k: int = 5, seed: int = 0) -> list[list[int]]:
    """View 0 is the identity; the others are seeded from the record id."""
    perms = [list(range(n_rows))]
    rng = np.random.default_rng([seed, stable_seed(record_id) % 2**63])
    for _ in range(k - 1):
        perms.append(rng.permutation(n_rows).tolist())
    return perms


def eval_perm_stability(
    standards: Sequence[AttentionStandard],
    provider: AttentionProvider,
    k: int = 5,
    seed: int = 0,
    min_valid: int = 3,
    workers: int = 4,
) -> dict:
    recs = _sorted(standards)

    def one(rec: AttentionStandard) -> dict:
        views = []
        for perm in row_permutations(rec.id, rec.table.n_rows, k, seed):
            table, mask = permute_rows(rec.table, rec.mask, perm)
            value, _ = _attend_auroc(provider, rec, table, mask)
            views.append(value)
        sigma = stats.perm_sigma(views, min_valid)
        return {"id": rec.id, "dataset": rec.dataset, "view_aurocs": views, "sigma": sigma,
                "status": "ok" if sigma is not None else "rejected"}

    rows = _map(one, recs, workers)
    sigmas = [r["sigma"] for r in rows if r["sigma"] is not None]
    return {
        "records": rows,
        "per_dataset": _per_dataset(rows, "sigma"),
        "overall": {"mean_sigma": _mean(sigmas), "n_valid": len(sigmas), "n": len(rows)},
        "k": k,
    }


def eval_falsification(
    standards: Sequence[AttentionStandard],
    provider: AttentionProvider,
    draws: int = 50,
    seed: int = 0,
    kinds: Sequence[NullKind | str] = tuple(NullKind),
    header_credit: bool = True,
    p_flip: float | None = 0.20,
    workers: int = 4,
) -> dict:
    """Ground-truth overlap versus density-preserving nulls, with a paired Wilcoxon test.

    The test pairs each record's ground-truth score with its mean
    cell-shuffled null score. With ``p_flip`` set, the score under a
    bit-flipped copy of the ground-truth mask is reported as well.
    """
    kinds = [NullKind(k) for k in kinds]
    recs = _sorted(standards)

    def one(rec: AttentionStandard) -> dict:
        row = {"id": rec.id, "dataset": rec.dataset, "status": "ok", "reason": ""}
        if rec.mask.count == 0:
            row.update(status="skipped", reason="empty mask")
            return row
        try:
            attn = provider.attend(rec.question, rec.table, mask=rec.mask, record_id=rec.id)
            row["gt"] = r_attn(attn, rec.mask, header_credit)
            row["null"] = {}
            for kind in kinds:
                spec = NullMaskSpec(kind, draws, stable_seed(seed, rec.id, kind.value) % 2**63)
                res = falsification_ratio(attn, rec.mask, spec, header_credit)
                row["null"][kind.value] = res.null_score
                if kind is NullKind.SHUFFLE_CELL:
                    row["ratio"] = res.ratio
            if p_flip is not None:
                noised = noise_mask(rec.mask, p_flip, stable_seed(seed, rec.id, "noise") % 2**63)
                row["noised"] = r_attn(attn, noised, header_credit)
        except (BackendError, ShapeMismatch) as e:
            row.update(status="skipped", reason=str(e))
        except EmptyMask:
            row.update(status="skipped", reason="empty mask")
        return row

    rows = _map(one, recs, workers)
    ok = [r for r in rows if r["status"] == "ok"]
    report: dict = {"records": rows, "n": len(rows), "n_ok": len(ok), "n_skipped": len(rows) - len(ok)}
    if not ok:
        return report
    mean_gt = float(np.mean([r["gt"] for r in ok]))
    report["mean_gt"] = mean_gt
    if p_flip is not None:
        report["mean_noised"] = float(np.mean([r["noised"] for r in ok]))
        report["p_flip"] = p_flip
    report["null"] = {}
    for kind in kinds:
        m = float(np.mean([r["null"][kind.value] for r in ok]))
        report["null"][kind.value] = {"mean": m, "ratio": mean_gt / max(m, EPS)}
    ref = NullKind.SHUFFLE_CELL.value
    if ref in report["null"]:
        report["ratio"] = report["null"][ref]["ratio"]
        diffs = [r["gt"] - r["null"][ref] for r in ok]
        if len(ok) < 2 or all(d == 0 for d in diffs):
            report["wilcoxon"] = None
        else:
            res = stats.wilcoxon_signed_rank(diffs)
            report["wilcoxon"] = {"statistic": res.statistic, "p_two_sided": res.p_value,
                                  "p_greater": res.p_greater, "n": res.n, "method": res.method}
    return report


@dataclass(frozen=True)
class Label:
    id: str
    dataset: str
    unit: str
    label: str

    @classmethod
    def from_json(cls, obj: dict) -> "Label":
        unit = str(obj.get("unit", "cell"))
        if unit not in ("cell", "step"):
            raise ValueError(f"label unit must be 'cell' or 'step', got {unit!r}")
        return cls(str(obj["id"]), str(obj.get("dataset", "")), unit, str(obj["label"]).strip().casefold())


def _agreement_block(pairs: list[tuple[str, str]]) -> dict:
    if not pairs:
        return {"n": 0, "agreement": None, "kappa": None}
    a, b = zip(*pairs)
    try:
        kappa = stats.cohens_kappa(a, b)
    except stats.DegenerateMarginals:
        kappa = None
    return {"n": len(pairs), "agreement": stats.agreement(a, b), "kappa": kappa}


def eval_labelability(judge: Sequence[Label], human: Sequence[Label]) -> dict:
    """Judge-vs-human agreement and Cohen's kappa per unit, per dataset and pooled.

    Step decisions the human marked ``unsure`` are dropped before scoring.
    """
    hmap = {(h.unit, h.id): h for h in human}
    jmap = {(j.unit, j.id): j for j in judge}
    misses = sorted({f"{u}:{i}" for (u, i) in set(hmap) ^ set(jmap)})
    report: dict = {"join_misses": misses}
    for unit in ("cell", "step"):
        keys = sorted(k for k in hmap if k[0] == unit and k in jmap)
        excluded = 0
        pooled: list[tuple[str, str]] = []
        by_ds: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for k in keys:
            h, j = hmap[k], jmap[k]
            if unit == "step" and h.label == "unsure":
                excluded += 1
                continue
            pooled.append((j.label, h.label))
            by_ds[h.dataset].append((j.label, h.label))
        block = _agreement_block(pooled)
        block["n_joined"] = len(keys)
        block["excluded_unsure"] = excluded
        block["per_dataset"] = {d: _agreement_block(by_ds[d]) for d in sorted(by_ds)}
        report[unit] = block
    return report


def load_labels(path) -> list[Label]:
    return [Label.from_json(o) for o in read_jsonl(path)]

