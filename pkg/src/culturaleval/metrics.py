"""Edit-level and dialog-level metrics.

Everything is computed in full precision; :func:`round_half_up` is applied
only when values are written out.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .corpus import AdaptationRecord, Category, CsiAnnotation
from .judge.parsers import CLASSIFIABLE, DIALOG_ASPECTS, DialogScores, Edit, EditScores, Strategy
from .textmatch import DEFAULT_THRESHOLD, contains_fuzzy, normalize, token_set_ratio

log = logging.getLogger(__name__)

SCORED_LEVELS = (2, 3)


def round_half_up(value: float | None, places: int = 2) -> float | None:
    if value is None:
        return None
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def fmt(value: float | None, places: int = 2) -> str:
    """Fixed-point rendering; ``"n/a"`` for undefined values."""
    if value is None:
        return "n/a"
    return f"{round_half_up(value, places):.{places}f}"


def _pct(part: int, whole: int) -> float | None:
    return 100.0 * part / whole if whole else None


# -- %CSI edited --------------------------------------------------------------


@dataclass(frozen=True)
class CsiDecision:
    edited: bool
    match_score: int
    matched_window: str = ""


@dataclass(frozen=True)
class CsiEditReport:
    overall_pct_edited: float | None
    per_category: Mapping[str, float | None]
    per_foreignness: Mapping[int, float | None]
    per_csi: Mapping[CsiAnnotation, CsiDecision]
    n_total: int
    n_found: int
    threshold: int
    mode: str = "occurrence"
    missing_adaptations: tuple[str, ...] = ()
    category_counts: Mapping[str, int] = field(default_factory=dict)
    foreignness_counts: Mapping[int, int] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.n_total == 0


def _adapted_text(record: AdaptationRecord | str) -> str:
    return record if isinstance(record, str) else " ".join(u.text for u in record.utterances)


def csi_edited_percentage(
    annotations: Iterable[CsiAnnotation],
    adaptations: Mapping[str, AdaptationRecord | str],
    threshold: int = DEFAULT_THRESHOLD,
    *,
    mode: str = "occurrence",
) -> CsiEditReport:
    """Share of scored CSI no longer found in the adapted dialogs.

    Found-ness is a fuzzy match of the surface against the whole adapted
    dialog text. ``mode="type"`` collapses repeated surfaces of a dialog
    into one item for sensitivity checks.
    """
    if mode not in ("occurrence", "type"):
        raise ValueError(f"mode must be 'occurrence' or 'type', got {mode!r}")
    scored = [a for a in annotations if a.foreignness in SCORED_LEVELS]
    missing = sorted({a.dialog_id for a in scored if a.dialog_id not in adaptations})
    if missing:
        log.warning("%d dialog(s) have annotations but no adaptation; their CSI are excluded", len(missing))
    scored = [a for a in scored if a.dialog_id in adaptations]
    if mode == "type":
        seen: set[tuple[str, str]] = set()
        unique = []
        for a in scored:
            key = (a.dialog_id, normalize(a.surface))
            if key not in seen:
                seen.add(key)
                unique.append(a)
        scored = unique

    texts: dict[str, str] = {}
    cache: dict[tuple[str, str], tuple[bool, int, str]] = {}
    per_csi: dict[CsiAnnotation, CsiDecision] = {}
    cat_total: Counter[str] = Counter()
    cat_edited: Counter[str] = Counter()
    lvl_total: Counter[int] = Counter()
    lvl_edited: Counter[int] = Counter()
    n_found = 0
    for a in scored:
        if a.dialog_id not in texts:
            texts[a.dialog_id] = _adapted_text(adaptations[a.dialog_id])
        key = (a.dialog_id, a.surface)
        if key not in cache:
            found, best = contains_fuzzy(a.surface, texts[a.dialog_id], threshold)
            cache[key] = (found, best.score, best.matched_window)
        found, score, window = cache[key]
        per_csi[a] = CsiDecision(edited=not found, match_score=score, matched_window=window)
        n_found += found
        cat_total[a.category.value] += 1
        lvl_total[a.foreignness] += 1
        if not found:
            cat_edited[a.category.value] += 1
            lvl_edited[a.foreignness] += 1

    n = len(scored)
    return CsiEditReport(
        overall_pct_edited=_pct(n - n_found, n),
        per_category={c.value: _pct(cat_edited[c.value], cat_total[c.value]) for c in Category},
        per_foreignness={lvl: _pct(lvl_edited[lvl], lvl_total[lvl]) for lvl in SCORED_LEVELS},
        per_csi=per_csi,
        n_total=n,
        n_found=n_found,
        threshold=threshold,
        mode=mode,
        missing_adaptations=tuple(missing),
        category_counts={c.value: cat_total[c.value] for c in Category},
        foreignness_counts={lvl: lvl_total[lvl] for lvl in SCORED_LEVELS},
    )


# -- aligning edits to CSI ----------------------------------------------------


@dataclass(frozen=True)
class Alignment:
    """Edit/CSI pairing for one adapted corpus.

    ``aligned`` pairs go to the strategy classifier. ``preserved`` CSI kept
    their surface and had no edit. ``unaligned`` CSI vanished without any
    matching edit. ``creation`` edits touch no CSI but introduce a
    target-culture item; ``other_edits`` touch no CSI at all.
    """

    aligned: tuple[tuple[CsiAnnotation, Edit, int], ...] = ()
    preserved: tuple[CsiAnnotation, ...] = ()
    unaligned: tuple[CsiAnnotation, ...] = ()
    creation: tuple[tuple[str, Edit], ...] = ()
    other_edits: tuple[tuple[str, Edit], ...] = ()

    @property
    def strategies(self) -> dict[CsiAnnotation, Strategy]:
        return {a: Strategy.PRESERVATION for a in self.preserved}


def _by_dialog(items, key):
    out = defaultdict(list)
    for item in items:
        out[key(item)].append(item)
    return out


def align_edits_to_csi(
    edits: Mapping[str, Sequence[Edit]],
    annotations: Iterable[CsiAnnotation],
    csi_report: CsiEditReport | None = None,
    threshold: int = DEFAULT_THRESHOLD,
    *,
    creation_lexicon: Sequence[str] = (),
) -> Alignment:
    """Greedy one-to-one matching of CSI occurrences to extracted edits.

    Candidate pairs score ``token_set_ratio(surface, edit.source)`` and must
    reach ``threshold``. Pairs are taken best-first; ties go to the earlier
    utterance, then the earlier edit, then annotation order.
    """
    anns = [a for a in annotations if a.foreignness in SCORED_LEVELS]
    anns_by_dialog = _by_dialog(anns, lambda a: a.dialog_id)
    aligned: list[tuple[CsiAnnotation, Edit, int]] = []
    preserved: list[CsiAnnotation] = []
    unaligned: list[CsiAnnotation] = []
    creation: list[tuple[str, Edit]] = []
    other: list[tuple[str, Edit]] = []
    lexicon = [t for t in (normalize(x) for x in creation_lexicon) if t]

    for did in sorted(set(anns_by_dialog) | set(edits)):
        dialog_anns = anns_by_dialog.get(did, [])
        dialog_edits = list(edits.get(did, ()))
        candidates = []
        for ei, e in enumerate(dialog_edits):
            src = normalize(e.source)
            if not src:
                continue
            for ai, a in enumerate(dialog_anns):
                score = token_set_ratio(normalize(a.surface), src)
                if score >= threshold:
                    candidates.append((-score, e.utterance_index, ei, ai))
        candidates.sort()
        used_edits: set[int] = set()
        used_anns: set[int] = set()
        for neg_score, _, ei, ai in candidates:
            if ei in used_edits or ai in used_anns:
                continue
            used_edits.add(ei)
            used_anns.add(ai)
            aligned.append((dialog_anns[ai], dialog_edits[ei], -neg_score))
        for ai, a in enumerate(dialog_anns):
            if ai in used_anns:
                continue
            decision = csi_report.per_csi.get(a) if csi_report is not None else None
            if csi_report is not None and decision is None:
                continue  # dialog had no adaptation
            if decision is not None and decision.edited:
                unaligned.append(a)
            else:
                preserved.append(a)
        for ei, e in enumerate(dialog_edits):
            if ei in used_edits:
                continue
            target = normalize(e.target)
            if target and any(contains_fuzzy(term, target, threshold)[0] for term in lexicon):
                creation.append((did, e))
            else:
                other.append((did, e))
    return Alignment(tuple(aligned), tuple(preserved), tuple(unaligned), tuple(creation), tuple(other))


# -- aggregation --------------------------------------------------------------


@dataclass(frozen=True)
class EditAggregate:
    n_edits: int
    pct_correct: float | None
    avg_localisation: float | None
    localisation_distribution: tuple[float, float, float] | None
    pct_offensive: float | None
    n_null_scores: int = 0

    @property
    def empty(self) -> bool:
        return self.n_edits == 0


def aggregate_edit_scores(scores: Iterable[EditScores | None]) -> EditAggregate:
    scores = list(scores)
    valid = [s for s in scores if s is not None]
    n = len(valid)
    if n == 0:
        return EditAggregate(0, None, None, None, None, len(scores))
    loc = Counter(s.localisation for s in valid)
    return EditAggregate(
        n_edits=n,
        pct_correct=100.0 * sum(s.correctness for s in valid) / n,
        avg_localisation=sum(s.localisation for s in valid) / n,
        localisation_distribution=(100.0 * loc[0] / n, 100.0 * loc[1] / n, 100.0 * loc[2] / n),
        pct_offensive=100.0 * sum(s.offensiveness for s in valid) / n,
        n_null_scores=len(scores) - n,
    )


def _compact(value: float) -> str:
    text = f"{round_half_up(value, 1):.1f}"
    return text[:-2] if text.endswith(".0") else text


def format_edit_row(agg: EditAggregate) -> str:
    """``correct / avg loc / dist0, dist1, dist2 / offensive`` as in the edit-score table."""
    if agg.empty:
        return "n/a / n/a / n/a / n/a"
    dist = ", ".join(_compact(v) for v in agg.localisation_distribution)
    return f"{fmt(agg.pct_correct)} / {fmt(agg.avg_localisation)} / {dist} / {fmt(agg.pct_offensive)}"


@dataclass(frozen=True)
class DialogAggregate:
    means: Mapping[str, float | None]
    n_dialogs: int
    n_null: int = 0

    def __getattr__(self, name: str):
        if name in DIALOG_ASPECTS:
            return self.means[name]
        raise AttributeError(name)


def aggregate_dialog_scores(records: Iterable[DialogScores | None]) -> DialogAggregate:
    records = list(records)
    valid = [r for r in records if r is not None]
    n = len(valid)
    means = {a: (sum(getattr(r, a) for r in valid) / n if n else None) for a in DIALOG_ASPECTS}
    return DialogAggregate(means, n, len(records) - n)


@dataclass(frozen=True)
class StrategyDistribution:
    percentages: Mapping[Strategy, float]
    counts: Mapping[Strategy, int]
    creation_count: int = 0
    preservation_count: int = 0
    unaligned_count: int = 0

    @property
    def empty(self) -> bool:
        return sum(self.counts.values()) == 0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(self.percentages[s] for s in CLASSIFIABLE)


def strategy_distribution(
    strategies: Iterable[Strategy | None],
    *,
    unaligned_count: int = 0,
) -> StrategyDistribution:
    """Percentages over the five classifiable strategies.

    Preservation and Creation are counted separately and stay out of the
    denominator, as do nulls.
    """
    counts: Counter[Strategy] = Counter(s for s in strategies if s is not None)
    total = sum(counts[s] for s in CLASSIFIABLE)
    return StrategyDistribution(
        percentages={s: (100.0 * counts[s] / total if total else 0.0) for s in CLASSIFIABLE},
        counts={s: counts[s] for s in CLASSIFIABLE},
        creation_count=counts[Strategy.CREATION],
        preservation_count=counts[Strategy.PRESERVATION],
        unaligned_count=unaligned_count,
    )
