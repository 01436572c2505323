"""Kendall rank correlation with tie correction, and helpers around it."""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .judge.parsers import DIALOG_ASPECTS

BANDS = ((0.1, "very weak"), (0.2, "weak"), (0.3, "moderate"))
EXACT_MAX_N = 10


class UndefinedTauError(ValueError):
    """One of the inputs is constant, so tau-b has a zero denominator."""


@dataclass(frozen=True)
class TauResult:
    tau: float
    p_value: float
    n: int
    band: str
    method: str = "normal"

    def significant(self, level: float = 0.05) -> bool:
        return self.p_value < level


def interpret_tau(tau: float) -> str:
    """Strength band of ``|tau|``: very weak < 0.1 <= weak < 0.2 <= moderate < 0.3 <= strong."""
    if not abs(tau) <= 1.0 + 1e-12:
        raise ValueError(f"|tau| must be <= 1, got {tau}")
    a = abs(tau)
    for upper, name in BANDS:
        if a < upper:
            return name
    return "strong"


def _tie_pairs(values: Sequence) -> int:
    return sum(t * (t - 1) // 2 for t in Counter(values).values())


def _count_inversions(seq: list) -> int:
    """Strict inversions (i < j, seq[i] > seq[j]) via merge sort."""
    n = len(seq)
    if n < 2:
        return 0
    swaps = 0
    width = 1
    buf = list(seq)
    while width < n:
        out = []
        for lo in range(0, n, 2 * width):
            left = buf[lo:lo + width]
            right = buf[lo + width:lo + 2 * width]
            i = j = 0
            while i < len(left) and j < len(right):
                if right[j] < left[i]:
                    out.append(right[j])
                    swaps += len(left) - i
                    j += 1
                else:
                    out.append(left[i])
                    i += 1
            out.extend(left[i:])
            out.extend(right[j:])
        buf = out
        width *= 2
    return swaps


def _s_statistic(x: Sequence[float], y: Sequence[float]) -> tuple[int, int, int, int]:
    """``(C - D, n0, n1, n2)`` using Knight's O(n log n) counting."""
    n = len(x)
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(x)
    n2 = _tie_pairs(y)
    n3 = _tie_pairs(zip(x, y))
    pairs = sorted(zip(x, y))
    discordant = _count_inversions([p[1] for p in pairs])
    return n0 - n1 - n2 + n3 - 2 * discordant, n0, n1, n2


def _normal_p(tau: float, n: int) -> float:
    z = 3.0 * tau * math.sqrt(n * (n - 1)) / math.sqrt(2.0 * (2 * n + 5))
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def _exact_p(x: Sequence[float], y: Sequence[float], s_obs: int) -> float:
    """Two-sided permutation p-value, enumerating every ordering of ``y``."""
    n = len(x)
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    i_idx, j_idx = np.triu_indices(n, k=1)
    x_sign = np.sign(xs[j_idx] - xs[i_idx]).astype(np.int8)
    perms = itertools.permutations(range(n))
    extreme = total = 0
    while True:
        chunk = np.array(list(itertools.islice(perms, 100_000)), dtype=np.int64)
        if chunk.size == 0:
            break
        yp = ys[chunk]
        s = (np.sign(yp[:, j_idx] - yp[:, i_idx]).astype(np.int8) * x_sign).sum(axis=1, dtype=np.int64)
        extreme += int(np.count_nonzero(np.abs(s) >= abs(s_obs)))
        total += len(chunk)
    return extreme / total


def kendall_tau_b(x: Sequence[float], y: Sequence[float], *, method: str = "normal") -> TauResult:
    """Kendall's tau-b with a two-sided p-value.

    ``method="normal"`` uses ``z = 3 tau sqrt(n(n-1)) / sqrt(2(2n+5))``;
    ``method="exact"`` enumerates all permutations (n <= 10 only).
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two paired observations")
    if method not in ("normal", "exact"):
        raise ValueError(f"unknown p-value method {method!r}")
    s, n0, n1, n2 = _s_statistic(x, y)
    if n0 == n1 or n0 == n2:
        raise UndefinedTauError("tau-b is undefined when either input is constant")
    tau = s / math.sqrt((n0 - n1) * (n0 - n2))
    tau = max(-1.0, min(1.0, tau))
    if method == "exact":
        if n > EXACT_MAX_N:
            raise ValueError(f"exact p-values are limited to n <= {EXACT_MAX_N}")
        p = _exact_p(x, y, s)
    else:
        p = _normal_p(tau, n)
    return TauResult(tau, p, n, interpret_tau(tau), method)


@dataclass(frozen=True)
class CorrelationMatrix:
    aspects: tuple[str, ...]
    entries: Mapping[tuple[str, str], TauResult | None]
    significance_level: float = 0.05

    def tau(self, a: str, b: str) -> float | None:
        r = self.entries[(a, b)]
        return None if r is None else r.tau

    def significant(self, a: str, b: str) -> bool:
        r = self.entries[(a, b)]
        return r is not None and r.p_value < self.significance_level


def correlation_matrix(
    table: Mapping[str, Sequence[float]],
    significance_level: float = 0.05,
    *,
    method: str = "normal",
) -> CorrelationMatrix:
    """Pairwise tau-b between columns; undefined entries (constant columns) are ``None``."""
    aspects = tuple(table)
    lengths = {len(v) for v in table.values()}
    if len(lengths) > 1:
        raise ValueError(f"ragged table: column lengths {sorted(lengths)}")
    entries: dict[tuple[str, str], TauResult | None] = {}
    for i, a in enumerate(aspects):
        for b in aspects[i:]:
            try:
                r = kendall_tau_b(table[a], table[b], method=method)
            except UndefinedTauError:
                r = None
            entries[(a, b)] = entries[(b, a)] = r
    return CorrelationMatrix(aspects, entries, significance_level)


def load_human_ratings(path: str | Path) -> dict[str, dict[str, float]]:
    """Average per-dialog ratings across raters.

    The CSV has ``dialog_id, rater_id`` and one 1-5 integer column per
    dialog-level aspect.
    """
    sums: dict[str, dict[str, float]] = defaultdict(lambda: dict.fromkeys(DIALOG_ASPECTS, 0.0))
    counts: Counter[str] = Counter()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or [])
        missing = {"dialog_id", "rater_id", *DIALOG_ASPECTS} - header
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rowno, row in enumerate(reader, start=2):
            did = row["dialog_id"].strip()
            for a in DIALOG_ASPECTS:
                try:
                    v = int(row[a])
                except (TypeError, ValueError):
                    raise ValueError(f"{path}:{rowno}: {a} is not an integer: {row[a]!r}") from None
                if not 1 <= v <= 5:
                    raise ValueError(f"{path}:{rowno}: {a}={v} outside 1..5")
                sums[did][a] += v
            counts[did] += 1
    return {did: {a: sums[did][a] / counts[did] for a in DIALOG_ASPECTS} for did in sums}
