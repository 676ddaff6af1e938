"""Attention-overlap step verification.

Per-cell attention is pooled from token spans of the canonical serialization,
scored against a plan step's cell mask, and optionally mapped through a
two-parameter logistic calibration. The mask perturbation generators used to
falsify the score (density-preserving nulls, bit-flip noise) live here too.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .table import HEADER_ROW, CellMask, MaskSource, SpanIndex

EPS = 1e-6


class RangeOutOfBounds(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class CellAttention:
    """Nonnegative attention mass per data cell and per column header."""

    __slots__ = ("scores", "header_scores", "discarded")

    def __init__(self, scores, header_scores=None, discarded: float = 0.0):
        s = np.array(scores, dtype=float)
        if s.ndim != 2:
            if s.size == 0:
                s = s.reshape(0, len(header_scores) if header_scores is not None else 0)
            else:
                raise ValueError(f"scores must be 2-D, got shape {s.shape}")
        h = np.zeros(s.shape[1]) if header_scores is None else np.array(header_scores, dtype=float)
        if h.shape != (s.shape[1],):
            raise ShapeMismatch(f"header_scores shape {h.shape} does not match {s.shape[1]} columns")
        if not (np.isfinite(s).all() and np.isfinite(h).all()):
            raise ValueError("attention scores must be finite")
        if (s < 0).any() or (h < 0).any():
            raise ValueError("attention scores must be nonnegative")
        s.flags.writeable = False
        h.flags.writeable = False
        self.scores = s
        self.header_scores = h
        self.discarded = float(discarded)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    @property
    def total(self) -> float:
        return float(self.scores.sum() + self.header_scores.sum())

    @classmethod
    def from_payload(cls, payload: dict, index: SpanIndex | None = None, shape: tuple[int, int] | None = None):
        """Build from a backend payload: ``per_cell``/``per_header`` or ``spans``."""
        if "spans" in payload:
            if index is None:
                raise ValueError("span payloads need the SpanIndex of the serialized table")
            spans = [((int(s["start"]), int(s["end"])), float(s["score"])) for s in payload["spans"]]
            return aggregate_cells(spans, index)
        if "per_cell" not in payload:
            raise ValueError("attention payload needs 'per_cell' or 'spans'")
        per_cell = payload["per_cell"]
        headers = payload.get("per_header")
        if shape is not None:
            scores = np.asarray(per_cell, dtype=float)
            if scores.size == 0:
                scores = scores.reshape(shape)
            if scores.shape != tuple(shape):
                raise ShapeMismatch(f"per_cell shape {scores.shape} != table shape {tuple(shape)}")
            if headers is None:
                headers = np.zeros(shape[1])
            return cls(scores, headers)
        return cls(per_cell, headers)

    def to_payload(self) -> dict:
        return {"per_cell": self.scores.tolist(), "per_header": self.header_scores.tolist()}


def aggregate_cells(token_scores: Iterable[tuple[tuple[int, int], float]], index: SpanIndex) -> CellAttention:
    """Pool token-range attention into cells, splitting by overlap fraction.

    Header mass goes to the column's header score; mass over delimiters is
    recorded in ``discarded``.
    """
    n_rows = 1 + max((r for r, _ in index.cells), default=-1)
    n_cols = len(index.headers)
    cells = np.zeros((n_rows, n_cols))
    headers = np.zeros(n_cols)
    discarded = 0.0
    for (start, end), score in token_scores:
        if start < 0 or end > index.length or start > end:
            raise RangeOutOfBounds(f"token range [{start}, {end}) outside [0, {index.length})")
        if score < 0 or not math.isfinite(score):
            raise ValueError(f"token score must be finite and nonnegative, got {score}")
        if end == start:
            coord = index.locate(start) if start < index.length else None
            pieces = [(coord, 1.0)] if coord is not None else []
        else:
            width = end - start
            pieces = [(coord, (hi - lo) / width) for coord, lo, hi in index.overlapping(start, end)]
        kept = 0.0
        for (r, c), frac in pieces:
            mass = score * frac
            if r == HEADER_ROW:
                headers[c] += mass
            else:
                cells[r, c] += mass
            kept += mass
        discarded += score - kept
    return CellAttention(cells, headers, discarded=discarded)


def r_attn(attn: CellAttention, mask: CellMask, header_credit: bool = True) -> float:
    """Share of table attention mass that falls on the masked cells.

    Header mass always counts toward the total; with ``header_credit`` it also
    counts as on-target for columns holding at least one masked cell (every
    column, for a uniform mask). Returns 0 when total mass is below ``EPS``.
    """
    if attn.shape != mask.shape:
        raise ShapeMismatch(f"attention shape {attn.shape} != mask shape {mask.shape}")
    bits = mask.bits.astype(float)
    cell_total = attn.scores.sum()
    head_total = attn.header_scores.sum()
    total = cell_total + head_total
    if total < EPS:
        return 0.0
    if mask.is_uniform or (attn.shape[0] > 0 and bool(bits.all())):
        hit = cell_total + (head_total if header_credit else 0.0)
    else:
        hit = (attn.scores * bits).sum()
        if header_credit:
            hit += (attn.header_scores * bits.any(axis=0)).sum()
    return float(min(1.0, max(0.0, hit / max(total, EPS))))


def is_informative(attn: CellAttention, mask: CellMask) -> bool:
    """False for steps that must not enter calibration data."""
    return attn.total >= EPS and not mask.is_uniform


def _sigmoid(z: np.ndarray | float):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class CalibrationParams:
    slope: float
    intercept: float

    def __call__(self, r):
        out = _sigmoid(self.slope * np.asarray(r, dtype=float) + self.intercept)
        return float(out) if out.ndim == 0 else out

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept}

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationParams":
        return cls(float(obj["slope"]), float(obj["intercept"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def bce(params: CalibrationParams, scores, labels) -> float:
    x = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    z = params.slope * x + params.intercept
    # log(1 + e^z) - y*z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass(frozen=True)
class CalibrationFit:
    params: CalibrationParams
    train_bce: float
    heldout_bce: float
    iterations: int
    n_train: int
    n_heldout: int


def _split(labels: np.ndarray, train_frac: float, rng: np.random.Generator):
    train, held = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_frac * len(idx)))
        if len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        train.extend(idx[:k])
        held.extend(idx[k:])
    train, held = np.array(sorted(train), dtype=int), np.array(sorted(held), dtype=int)
    if len(held) == 0:
        held, train = train[-1:], train[:-1]
    return train, held


def fit_calibration(
    samples: Sequence[tuple[float, int]],
    train_frac: float = 0.8,
    *,
    lr: float = 1.0,
    patience: int = 10,
    min_delta: float = 1e-7,
    max_iter: int = 5000,
    seed: int = 0,
) -> CalibrationFit:
    """Fit ``sigmoid(slope * r + intercept)`` to terminal correctness by BCE.

    Full-batch gradient descent on the training split, run on the
    standardized score and mapped back to raw-score parameters; stops once the held-out
    BCE has not improved by ``min_delta`` for ``patience`` iterations and
    returns the parameters with the best held-out loss. The split is
    stratified so both classes reach the training set when they can.
    """
    if len(samples) < 2:
        raise DegenerateLabels("need at least two samples")
    x = np.array([float(s) for s, _ in samples])
    y = np.array([int(l) for _, l in samples])
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise DegenerateLabels(f"all {len(y)} labels are {int(y[0])}")
    rng = np.random.default_rng(seed)
    tr, ho = _split(y, train_frac, rng)
    xt, yt, xh, yh = x[tr], y[tr], x[ho], y[ho]

    # descend on the standardized score so the step size does not depend on its spread
    mu = float(xt.mean())
    sd = float(xt.std()) or 1.0
    zt = (xt - mu) / sd

    def params_of(w: float, b: float) -> CalibrationParams:
        return CalibrationParams(w / sd, b - w * mu / sd)

    base = float(np.clip(yt.mean(), 1e-6, 1 - 1e-6))
    w, b = 0.0, math.log(base / (1 - base))
    best = (bce(params_of(w, b), xh, yh), w, b)
    stale = 0
    it = 0
    for it in range(1, max_iter + 1):
        g = _sigmoid(w * zt + b) - yt
        w -= lr * float(np.mean(g * zt))
        b -= lr * float(np.mean(g))
        loss = bce(params_of(w, b), xh, yh)
        if loss < best[0] - min_delta:
            best = (loss, w, b)
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    params = params_of(best[1], best[2])
    return CalibrationFit(params, bce(params, xt, yt), best[0], it, len(tr), len(ho))


class NullKind(str, enum.Enum):
    SHUFFLE_CELL = "shuffle_cell"
    SHUFFLE_WITHIN_ROW = "shuffle_within_row"
    SHUFFLE_WITHIN_COL = "shuffle_within_col"
    PERMUTE_COLUMNS = "permute_columns"


@dataclass(frozen=True)
class NullMaskSpec:
    kind: NullKind = NullKind.SHUFFLE_CELL
    draws: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NullKind(self.kind))
        if self.draws < 1:
            raise ValueError("draws must be >= 1")


def null_masks(mask: CellMask, spec: NullMaskSpec) -> list[CellMask]:
    """Density-preserving reshuffles of ``mask``; reproducible for a given seed."""
    if mask.count == 0:
        raise EmptyMask("null masks need at least one set bit")
    rng = np.random.default_rng(spec.seed)
    bits = mask.bits
    n_rows, n_cols = bits.shape
    out = []
    for _ in range(spec.draws):
        if spec.kind is NullKind.SHUFFLE_CELL:
            new = rng.permutation(bits.ravel()).reshape(bits.shape)
        elif spec.kind is NullKind.SHUFFLE_WITHIN_ROW:
            new = rng.permuted(bits, axis=1)
        elif spec.kind is NullKind.SHUFFLE_WITHIN_COL:
            new = rng.permuted(bits, axis=0)
        else:
            new = bits[:, rng.permutation(n_cols)]
        out.append(CellMask(new, MaskSource.NULL_SHUFFLED))
    return out


def noise_mask(mask: CellMask, p_flip: float = 0.20, seed: int = 0) -> CellMask:
    if not 0.0 <= p_flip <= 1.0:
        raise ValueError(f"p_flip must lie in [0, 1], got {p_flip}")
    rng = np.random.default_rng(seed)
    flips = rng.random(mask.shape) < p_flip
    return CellMask(np.where(flips, 1 - mask.bits, mask.bits), MaskSource.NOISED)


@dataclass(frozen=True)
class FalsificationResult:
    gt_score: float
    null_score: float
    ratio: float
    null_scores: tuple[float, ...]


def falsification_ratio(
    attn: CellAttention, gt_mask: CellMask, spec: NullMaskSpec = NullMaskSpec(), header_credit: bool = True
) -> FalsificationResult:
    gt = r_attn(attn, gt_mask, header_credit)
    nulls = tuple(r_attn(attn, m, header_credit) for m in null_masks(gt_mask, spec))
    mean_null = float(np.mean(nulls))
    return FalsificationResult(gt, mean_null, gt / max(mean_null, EPS), nulls)
