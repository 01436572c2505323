import random
import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from culturaleval.textmatch import (
    contains_fuzzy,
    levenshtein,
    normalize,
    similarity_ratio,
    token_set_ratio,
    window_widths,
)
from oracles import dp_levenshtein, ratio_oracle, token_set_oracle

words = st.text(alphabet="abcde", min_size=1, max_size=4)
phrases = st.lists(words, min_size=0, max_size=6).map(" ".join)


@pytest.mark.parametrize(
    "raw, expected",
    [("Wendy's!", "wendy s"), ("  Ice   Cream ", "ice cream"), ("", ""), ("Bing! Cherry-Vanilla", "bing cherry vanilla")],
)
def test_normalize(raw, expected):
    assert normalize(raw) == expected


@pytest.mark.parametrize("a, b, expected", [("abc", "abc", 100), ("kitten", "sitting", 57), ("a", "", 0), ("", "", 100)])
def test_similarity_ratio_examples(a, b, expected):
    assert similarity_ratio(a, b) == expected


def test_kitten_sitting_distance_matches_oracle():
    assert dp_levenshtein("kitten", "sitting") == 3 == levenshtein("kitten", "sitting")


def test_half_up_rounding_at_boundary():
    # 1 - 1/8 = 87.5 exactly, which must round up
    assert similarity_ratio("abcdefgh", "abcdefgx") == 88


def test_levenshtein_against_dp_random():
    rng = random.Random(7)
    for _ in range(500):
        a = "".join(rng.choices("abcd ", k=rng.randint(0, 40)))
        b = "".join(rng.choices("abcd ", k=rng.randint(0, 40)))
        assert levenshtein(a, b) == dp_levenshtein(a, b)


def test_levenshtein_handles_non_ascii():
    assert levenshtein("chaï", "chai") == 1
    assert levenshtein("नमस्ते", "नमस्कार") == dp_levenshtein("नमस्ते", "नमस्कार")


def test_token_set_examples():
    assert token_set_ratio("ice cream", "cream ice") == 100
    assert token_set_ratio("", "x") == 0
    assert token_set_ratio("x", "") == 0


def test_meatball_golden_from_oracle():
    # s0="meatball", s1="meatball sub", s2="meatball sandwich": 67, 47, 59
    golden = token_set_oracle("meatball sub", "meatball sandwich")
    assert golden == 67
    assert token_set_ratio("meatball sub", "meatball sandwich") == golden


@given(st.text(alphabet="abc xy", max_size=20), st.text(alphabet="abc xy", max_size=20))
def test_similarity_symmetric_and_identity(a, b):
    assert similarity_ratio(a, b) == similarity_ratio(b, a)
    assert (similarity_ratio(a, b) == 100) == (a == b)


@given(phrases, phrases, st.randoms(use_true_random=False))
def test_token_set_permutation_invariant(a, b, rnd):
    toks = a.split()
    rnd.shuffle(toks)
    assert token_set_ratio(" ".join(toks), b) == token_set_ratio(a, b)


@given(phrases, phrases)
def test_token_set_matches_formula(a, b):
    assert token_set_ratio(a, b) == token_set_oracle(a, b)


def test_window_widths_clamped():
    assert window_widths(1) == [1, 2]
    assert window_widths(3) == [2, 3, 4]


def test_contains_exact_presence():
    found, best = contains_fuzzy("Thanksgiving", "Remember the turkey at Thanksgiving, Ross?")
    assert found and best.score == 100
    # the wider window starting one token earlier also scores 100 and wins the tie
    assert best.matched_window == "at thanksgiving"


def test_contains_replacement_not_found():
    found, best = contains_fuzzy("Thanksgiving", "the one you gave me on Diwali last time", 80)
    assert not found
    assert best.score < 80


def test_contains_inflection_found():
    found, _ = contains_fuzzy("candle", "she lit the candles for us")
    assert found


def test_contains_empty_haystack():
    found, best = contains_fuzzy("turkey", "")
    assert not found and best.score == 0 and best.matched_window == ""


def test_contains_errors():
    with pytest.raises(ValueError):
        contains_fuzzy("  ", "anything")
    with pytest.raises(ValueError):
        contains_fuzzy("x", "x", threshold=101)


def test_contains_ties_go_to_earliest_window():
    _, best = contains_fuzzy("rohan", "rohan met rohan")
    assert best.window_span == (0, 1)


def test_contains_window_is_contiguous_slice():
    hay = "we went to the anjuna flea market in goa"
    _, best = contains_fuzzy("flea market", hay)
    s, e = best.window_span
    assert " ".join(normalize(hay).split()[s:e]) == best.matched_window


@given(phrases.filter(bool), phrases, phrases)
def test_contains_monotone_in_haystack(needle, h1, h2):
    base = contains_fuzzy(needle, h1)[1].score
    assert contains_fuzzy(needle, h1 + " " + h2)[1].score >= base
    assert contains_fuzzy(needle, h2 + " " + h1)[1].score >= base


def test_scores_bounded_random():
    rng = random.Random(3)
    for _ in range(200):
        a = "".join(rng.choices(string.ascii_lowercase + " ", k=rng.randint(0, 20)))
        b = "".join(rng.choices(string.ascii_lowercase + " ", k=rng.randint(0, 20)))
        assert 0 <= similarity_ratio(a, b) == ratio_oracle(a, b) <= 100
