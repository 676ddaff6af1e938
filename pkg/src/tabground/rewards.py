"""Content-based step rewards and answer matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .engine import TableState
from .table import Table, parse_number, to_text


class EmptyEncoding(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return text.casefold().split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length under case-folded token equality."""
    a = [t.casefold() for t in a]
    b = [t.casefold() for t in b]
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def lcs_alignment(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` of one maximal common subsequence of ``a`` and ``b``."""
    a = [t.casefold() for t in a]
    b = [t.casefold() for t in b]
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            table[i][j] = table[i + 1][j + 1] + 1 if a[i] == b[j] else max(table[i + 1][j], table[i][j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


@dataclass(frozen=True)
class TabRougeState:
    enc_len: int
    lcs_len: int
    score: float


def tabrouge_tokens(query: Sequence[str], encoding: Sequence[str]) -> TabRougeState:
    if not encoding:
        raise EmptyEncoding("state encoding has no tokens")
    c = lcs_length(query, encoding)
    return TabRougeState(len(encoding), c, c / len(encoding))


def tabrouge(question: str, state: TableState | Table) -> TabRougeState:
    """LCS coverage of the question by the serialized state, over the state's length."""
    table = state.table if isinstance(state, TableState) else state
    return tabrouge_tokens(tokenize(question), tokenize(to_text(table)))


def _norm_answer(s: str) -> str:
    return " ".join(s.split()).casefold()


def match_answer(pred: str, gold: str, rel_tol: float = 0.02) -> bool:
    """Normalized exact match, or numeric match within ``rel_tol`` of the gold value."""
    p, g = _norm_answer(pred), _norm_answer(gold)
    if p == g:
        return True
    x, y = parse_number(p), parse_number(g)
    if x is None or y is None:
        return False
    if y == 0:
        return x == 0
    # relative slack absorbs binary rounding of boundary cases such as 102 vs 100
    return abs(x - y) <= rel_tol * abs(y) * (1 + 1e-12)


@dataclass(frozen=True)
class RewardSignal:
    name: str
    value: float
    rationale: str = ""

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"reward {self.name} = {self.value} outside [0, 1]")

    def to_json(self) -> dict:
        return {"name": self.name, "value": self.value, "rationale": self.rationale}

    @classmethod
    def from_json(cls, obj: dict) -> "RewardSignal":
        return cls(str(obj["name"]), float(obj["value"]), str(obj.get("rationale", "")))


class StepReward(Protocol):
    """A content reward scoring the state a step produced."""

    name: str

    def __call__(self, question: str, state: TableState) -> RewardSignal: ...


class TabRougeReward:
    name = "tabrouge"

    def __call__(self, question: str, state: TableState) -> RewardSignal:
        t = tabrouge(question, state)
        return RewardSignal(self.name, t.score, f"lcs={t.lcs_len} len={t.enc_len}")


class ExternalReward:
    """Reward computed outside this package (embedding cosine, numeric F1, ...).

    ``fn`` receives the question and serialized state text and returns a value
    in [0, 1]; the backend owns any model it needs.
    """

    def __init__(self, name: str, fn: Callable[[str, str], float]):
        self.name = name
        self._fn = fn

    def __call__(self, question: str, state: TableState) -> RewardSignal:
        value = float(self._fn(question, to_text(state.table)))
        return RewardSignal(self.name, min(1.0, max(0.0, value)), "external")
