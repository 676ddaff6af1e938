import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabground.engine import TableState, ToolCall, execute
from tabground.rewards import (
    EmptyEncoding, ExternalReward, RewardSignal, TabRougeReward, lcs_alignment, lcs_length, match_answer,
    tabrouge, tabrouge_tokens, tokenize,
)
from tabground.table import Table
from tabground.theory import lcs_bruteforce

tokens = st.lists(st.sampled_from(list("abcd")), max_size=8)


def test_lcs_examples():
    assert lcs_length("a b c d e".split(), "a c e".split()) == 3
    assert lcs_length(["x"] * 4, []) == 0
    assert lcs_length(["A", "b"], ["a", "B"]) == 2


@given(tokens, tokens)
def test_lcs_matches_bruteforce(a, b):
    n = lcs_length(a, b)
    assert n == lcs_bruteforce(a, b) == len(lcs_alignment(a, b))
    assert lcs_length(a, a) == len(a)
    pairs = lcs_alignment(a, b)
    assert all(a[i] == b[j] for i, j in pairs)
    assert all(i0 < i1 and j0 < j1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]))


def test_tabrouge_contained_question():
    enc = "w1 q1 w2 q2 w3 q3 w4 q4 w5 w6".split()
    assert tabrouge_tokens("q1 q2 q3 q4".split(), enc).score == pytest.approx(0.4)
    with pytest.raises(EmptyEncoding):
        tabrouge_tokens(["a"], [])


def element_table():
    names = ["Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn"]
    return Table(("atom_num", "element"), tuple((str(21 + i), n) for i, n in enumerate(names)))


def test_sort_step_leaves_score_unchanged():
    table = element_table()
    question = "Which element has the highest atom_num ?"
    before = tabrouge(question, table)
    after_state = execute(TableState(table), ToolCall("sort", {"column": "atom_num", "direction": "desc"})).state
    after = tabrouge(question, after_state)
    # 5 header + 5 separator + 10 x 5 row tokens; only "atom_num" is shared
    assert before.enc_len == 60 and before.lcs_len == 1
    assert before.score == after.score == pytest.approx(0.0167, abs=5e-5)


def test_match_answer():
    assert match_answer("62,740", "62740")
    # 25.4 is 1.6% off 25.0, so it matches; 25.6 is 2.4% off
    assert match_answer("25.4", "25.0")
    assert not match_answer("25.6", "25.0")
    assert match_answer("102", "100")
    assert not match_answer("102.1", "100")
    assert match_answer("  The  Answer ", "the answer")
    assert match_answer("0", "0.0") and not match_answer("0.01", "0")
    assert not match_answer("abc", "100")


def test_reward_signals():
    state = TableState(element_table())
    sig = TabRougeReward()("atom_num", state)
    assert sig.name == "tabrouge" and 0 < sig.value < 1
    ext = ExternalReward("cosine", lambda q, text: 1.7)
    assert ext("q", state).value == 1.0
    with pytest.raises(ValueError):
        RewardSignal("x", 1.5)
    assert RewardSignal.from_json(sig.to_json()) == sig


def test_tokenize_casefolds():
    assert tokenize("Hello  WORLD\n|x|") == ["hello", "world", "|x|"]
