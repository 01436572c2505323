"""Deterministic fuzzy string matching.

Scores are integers on a 0-100 scale. ``similarity_ratio`` is a normalised
unit-cost Levenshtein similarity, ``token_set_ratio`` compares token sets the
way the familiar fuzzy-matching libraries do, and ``contains_fuzzy`` slides
token windows over a longer text to decide whether a short phrase is still
present in it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

DEFAULT_THRESHOLD = 80

_PUNCT = re.compile(r"[^\w\s]|_")


@dataclass(frozen=True)
class MatchResult:
    score: int
    matched_window: str
    window_span: tuple[int, int]


def normalize(text: str) -> str:
    """Lowercase, map punctuation to spaces and collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (bit-parallel, Hyyro 2001)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    m = len(b)
    peq: dict[str, int] = {}
    for i, ch in enumerate(b):
        peq[ch] = peq.get(ch, 0) | (1 << i)
    mask = (1 << m) - 1
    high = 1 << (m - 1)
    pv, mv, dist = mask, 0, m
    for ch in a:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | ~(xh | pv)
        mh = pv & xh
        if ph & high:
            dist += 1
        elif mh & high:
            dist -= 1
        ph = (ph << 1) | 1
        mh <<= 1
        pv = (mh | ~(xv | ph)) & mask
        mv = ph & xv & mask
    return dist


def similarity_ratio(a: str, b: str) -> int:
    """``100 * (1 - dist / max_len)`` rounded half-up; 100 for two empty strings."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 100
    same = longest - levenshtein(a, b)
    # exact half-up rounding of 100 * same / longest
    return (200 * same + longest) // (2 * longest)


def token_set_ratio(a: str, b: str) -> int:
    ta, tb = set(a.split()), set(b.split())
    if not ta or not tb:
        return 100 if not ta and not tb else 0
    inter = sorted(ta & tb)
    s0 = " ".join(inter)
    s1 = " ".join(inter + sorted(ta - tb))
    s2 = " ".join(inter + sorted(tb - ta))
    return max(similarity_ratio(s0, s1), similarity_ratio(s0, s2), similarity_ratio(s1, s2))


def window_widths(k: int) -> list[int]:
    return sorted({max(1, k - 1), k, k + 1})


def contains_fuzzy(needle: str, haystack: str, threshold: int = DEFAULT_THRESHOLD) -> tuple[bool, MatchResult]:
    """Best token-window match of ``needle`` inside ``haystack``.

    Windows of ``k-1``, ``k`` and ``k+1`` tokens (``k`` = needle token count)
    are scored with :func:`token_set_ratio`; the best one wins and ties go
    to the earliest start. A haystack shorter than the narrowest window
    yields score 0.
    """
    if not 0 <= threshold <= 100:
        raise ValueError(f"threshold must be within 0..100, got {threshold}")
    needle_norm = normalize(needle)
    if not needle_norm:
        raise ValueError("needle is empty after normalization")
    tokens = normalize(haystack).split()
    k = len(needle_norm.split())
    widths = window_widths(k)

    best = MatchResult(0, "", (0, 0))
    for start in range(len(tokens)):
        for width in widths:
            end = start + width
            if end > len(tokens):
                break
            window = " ".join(tokens[start:end])
            score = token_set_ratio(needle_norm, window)
            if score > best.score or (best.matched_window == "" and score == best.score):
                best = MatchResult(score, window, (start, end))
                if score == 100:
                    return True, best
    return best.score >= threshold, best
