"""Dialog, CSI annotation and adaptation records.

All record files are UTF-8 JSON Lines, one record per line; field names are
listed in SCHEMA.md. Every type here is frozen, so parsed corpora can be
shared freely between threads.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .textmatch import normalize

log = logging.getLogger(__name__)

TRANSCRIPT_NOTE = "TRANSCRIPT NOTE"
MAX_UTTERANCES = 15


class CorpusError(ValueError):
    """A record file could not be ingested."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Category(str, Enum):
    ECOLOGY = "Ecology"
    MATERIAL_CULTURE = "MaterialCulture"
    SOCIAL_CULTURE = "SocialCulture"
    INSTITUTIONS = "InstitutionsOrganisationsIdeas"
    GESTURES_AND_HABITS = "GesturesAndHabits"
    SLANG = "SlangOrFigureOfSpeech"
    OFFENSIVE = "OffensiveContent"
    SENSITIVE = "SociallySensitiveOrTaboo"
    HUMOUR = "Humour"

    @classmethod
    def parse(cls, label: str) -> "Category":
        key = _label_key(label)
        try:
            return _CATEGORY_KEYS[key]
        except KeyError:
            raise ValueError(f"unknown CSI category {label!r}") from None


def _label_key(label: str) -> str:
    key = "".join(ch for ch in label.lower() if ch.isalnum())
    return key.replace("and", "").replace("organizations", "organisations").replace("humor", "humour")


_CATEGORY_KEYS = {_label_key(c.value): c for c in Category}
# human-readable spellings used in the annotation guidelines
_CATEGORY_KEYS.update(
    {
        _label_key("Institutions, Organizations and Ideas"): Category.INSTITUTIONS,
        _label_key("Slang or Figure of Speech"): Category.SLANG,
        _label_key("Socially Sensitive or Taboo Topics"): Category.SENSITIVE,
        _label_key("Socially Sensitive and Taboo topics"): Category.SENSITIVE,
    }
)


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str

    def __post_init__(self) -> None:
        if not self.speaker.strip():
            raise ValueError("utterance speaker must be non-empty")
        if "\n" in self.speaker or "\r" in self.speaker:
            raise ValueError(f"speaker contains a line break: {self.speaker!r}")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("utterance text must fit on one line")

    @property
    def is_note(self) -> bool:
        return self.speaker == TRANSCRIPT_NOTE

    def serialize(self) -> str:
        return f"{self.speaker}: {self.text}"

    @classmethod
    def from_line(cls, line: str) -> "Utterance":
        speaker, sep, text = line.partition(":")
        if not sep:
            raise ValueError(f"not a 'speaker: text' line: {line!r}")
        return cls(speaker.strip(), text.strip())


@dataclass(frozen=True)
class Dialog:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))

    @property
    def text(self) -> str:
        return "\n".join(u.serialize() for u in self.utterances)

    def count(self, include_notes: bool = True) -> int:
        return sum(1 for u in self.utterances if include_notes or not u.is_note)

    def to_record(self) -> dict:
        return {"id": self.id, "utterances": [{"speaker": u.speaker, "text": u.text} for u in self.utterances]}

    def serialize(self) -> str:
        return _dumps(self.to_record())


@dataclass(frozen=True)
class CsiAnnotation:
    dialog_id: str
    surface: str
    category: Category
    foreignness: int
    occurrence_index: int = 0
    # False when the surface could not be located in its dialog
    located: bool = True

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.dialog_id, self.surface, self.occurrence_index)

    @property
    def excluded(self) -> bool:
        """Level-1 (assimilated) items are kept but never scored."""
        return self.foreignness == 1

    def to_record(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "surface": self.surface,
            "category": self.category.value,
            "foreignness": self.foreignness,
            "occurrence_index": self.occurrence_index,
        }

    def serialize(self) -> str:
        return _dumps(self.to_record())


@dataclass(frozen=True)
class AdaptationRecord:
    dialog_id: str
    model_id: str
    culture_id: str
    utterances: tuple[Utterance, ...]
    raw_completion: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))

    @property
    def text(self) -> str:
        return "\n".join(u.serialize() for u in self.utterances)

    def as_dialog(self) -> Dialog:
        return Dialog(self.dialog_id, self.utterances)

    def to_record(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "model_id": self.model_id,
            "culture_id": self.culture_id,
            "utterances": [{"speaker": u.speaker, "text": u.text} for u in self.utterances],
            "raw_completion": self.raw_completion,
        }

    def serialize(self) -> str:
        return _dumps(self.to_record())


@dataclass(frozen=True)
class StructureReport:
    dialog_id: str
    utterance_count_match: bool
    speaker_mismatches: tuple[tuple[int, str, str], ...]
    empty_adaptation: bool
    original_count: int = 0
    adapted_count: int = 0

    @property
    def clean(self) -> bool:
        return self.utterance_count_match and not self.speaker_mismatches and not self.empty_adaptation

    def to_record(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "utterance_count_match": self.utterance_count_match,
            "speaker_mismatches": [list(m) for m in self.speaker_mismatches],
            "empty_adaptation": self.empty_adaptation,
            "original_count": self.original_count,
            "adapted_count": self.adapted_count,
        }


@dataclass(frozen=True)
class CorpusStats:
    n_dialogs: int = 0
    n_utterances: int = 0
    n_speakers: int = 0
    n_occurrences: int = 0
    by_category: Mapping[str, int] = field(default_factory=dict)
    by_foreignness: Mapping[int, int] = field(default_factory=dict)


def _dumps(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)


def _records(stream: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise CorpusError("record is not an object", lineno)
        yield lineno, rec


def _utterances(raw, lineno: int) -> tuple[Utterance, ...]:
    if not isinstance(raw, list):
        raise CorpusError("'utterances' must be a list", lineno)
    out = []
    for i, u in enumerate(raw):
        if not isinstance(u, dict) or not isinstance(u.get("speaker"), str) or not isinstance(u.get("text"), str):
            raise CorpusError(f"utterance {i} needs string 'speaker' and 'text'", lineno)
        try:
            out.append(Utterance(u["speaker"], u["text"]))
        except ValueError as exc:
            raise CorpusError(f"utterance {i}: {exc}", lineno) from None
    return tuple(out)


def parse_dialog_corpus(
    stream: Iterable[str],
    *,
    permissive: bool = False,
    count_transcript_notes: bool = True,
) -> list[Dialog]:
    """Read dialog records, enforcing the 1..15 utterance filter.

    ``count_transcript_notes`` decides whether transcript notes count toward
    the utterance bound. ``permissive`` disables the bound and the empty-text
    check.
    """
    dialogs: list[Dialog] = []
    seen: set[str] = set()
    for lineno, rec in _records(stream):
        did = rec.get("id")
        if not isinstance(did, str) or not did:
            raise CorpusError("missing string 'id'", lineno)
        if did in seen:
            raise CorpusError(f"duplicate dialog id {did!r}", lineno)
        seen.add(did)
        dialog = Dialog(did, _utterances(rec.get("utterances"), lineno))
        if not permissive:
            n = dialog.count(include_notes=count_transcript_notes)
            if not 1 <= n <= MAX_UTTERANCES:
                raise CorpusError(f"dialog {did!r} has {n} utterances (allowed 1..{MAX_UTTERANCES})", lineno)
            for i, u in enumerate(dialog.utterances):
                if not u.text and not u.is_note:
                    raise CorpusError(f"dialog {did!r} utterance {i} has empty text", lineno)
        dialogs.append(dialog)
    return dialogs


def surface_in_dialog(surface: str, dialog: Dialog) -> bool:
    needle = normalize(surface)
    return bool(needle) and needle in normalize(" ".join(u.text for u in dialog.utterances))


def parse_csi_annotations(
    stream: Iterable[str],
    dialogs: Sequence[Dialog] | Mapping[str, Dialog] | None = None,
) -> list[CsiAnnotation]:
    """Read CSI occurrence records and check them against ``dialogs``.

    A surface that cannot be found in its dialog is kept with
    ``located=False`` and logged as a warning.
    """
    by_id = _index(dialogs) if dialogs is not None else None
    out: list[CsiAnnotation] = []
    keys: set[tuple[str, str, int]] = set()
    for lineno, rec in _records(stream):
        did, surface = rec.get("dialog_id"), rec.get("surface")
        if not isinstance(did, str) or not isinstance(surface, str) or not surface.strip():
            raise CorpusError("annotation needs string 'dialog_id' and non-empty 'surface'", lineno)
        try:
            category = Category.parse(str(rec.get("category", "")))
        except ValueError as exc:
            raise CorpusError(str(exc), lineno) from None
        foreignness = rec.get("foreignness")
        if isinstance(foreignness, bool) or foreignness not in (1, 2, 3):
            raise CorpusError(f"foreignness must be 1, 2 or 3, got {foreignness!r}", lineno)
        occ = rec.get("occurrence_index", 0)
        if isinstance(occ, bool) or not isinstance(occ, int) or occ < 0:
            raise CorpusError(f"occurrence_index must be a non-negative integer, got {occ!r}", lineno)
        ann = CsiAnnotation(did, surface, category, foreignness, occ)
        if ann.key in keys:
            raise CorpusError(f"duplicate annotation {ann.key!r}", lineno)
        keys.add(ann.key)
        if by_id is not None:
            if did not in by_id:
                raise CorpusError(f"annotation refers to unknown dialog {did!r}", lineno)
            if not surface_in_dialog(surface, by_id[did]):
                log.warning("line %d: surface %r not found in dialog %r", lineno, surface, did)
                ann = CsiAnnotation(did, surface, category, foreignness, occ, located=False)
        out.append(ann)
    return out


def parse_adaptations(stream: Iterable[str]) -> list[AdaptationRecord]:
    out = []
    seen: set[tuple[str, str]] = set()
    for lineno, rec in _records(stream):
        try:
            key = (rec["dialog_id"], rec["model_id"])
            record = AdaptationRecord(
                rec["dialog_id"],
                rec["model_id"],
                rec.get("culture_id", ""),
                _utterances(rec.get("utterances", []), lineno),
                rec.get("raw_completion", ""),
            )
        except KeyError as exc:
            raise CorpusError(f"missing field {exc.args[0]!r}", lineno) from None
        if key in seen:
            raise CorpusError(f"duplicate adaptation {key!r}", lineno)
        seen.add(key)
        out.append(record)
    return out


def _index(dialogs: Sequence[Dialog] | Mapping[str, Dialog]) -> Mapping[str, Dialog]:
    if isinstance(dialogs, Mapping):
        return dialogs
    return {d.id: d for d in dialogs}


def validate_adaptation_structure(original: Dialog, adapted: AdaptationRecord) -> StructureReport:
    if original.id != adapted.dialog_id:
        raise ValueError(f"dialog ids differ: {original.id!r} vs {adapted.dialog_id!r}")
    n_o, n_a = len(original.utterances), len(adapted.utterances)
    mismatches = tuple(
        (i, o.speaker, a.speaker)
        for i, (o, a) in enumerate(zip(original.utterances, adapted.utterances))
        if o.speaker.strip().casefold() != a.speaker.strip().casefold()
    )
    return StructureReport(
        dialog_id=original.id,
        utterance_count_match=n_o == n_a,
        speaker_mismatches=mismatches,
        empty_adaptation=n_a == 0,
        original_count=n_o,
        adapted_count=n_a,
    )


def corpus_stats(
    dialogs: Sequence[Dialog],
    annotations: Sequence[CsiAnnotation] = (),
    *,
    include_notes: bool = True,
) -> CorpusStats:
    ids = {d.id for d in dialogs}
    speakers: set[str] = set()
    n_utt = 0
    for d in dialogs:
        for u in d.utterances:
            if u.is_note and not include_notes:
                continue
            n_utt += 1
            if not u.is_note:
                speakers.add(u.speaker)
    by_cat: Counter[str] = Counter()
    by_level: Counter[int] = Counter()
    for a in annotations:
        if a.dialog_id not in ids:
            raise CorpusError(f"annotation refers to unknown dialog {a.dialog_id!r}")
        by_cat[a.category.value] += 1
        by_level[a.foreignness] += 1
    return CorpusStats(
        n_dialogs=len(dialogs),
        n_utterances=n_utt,
        n_speakers=len(speakers),
        n_occurrences=len(annotations),
        by_category={c.value: by_cat.get(c.value, 0) for c in Category},
        by_foreignness={lvl: by_level.get(lvl, 0) for lvl in (1, 2, 3)},
    )


def write_records(records: Iterable, fh: IO[str]) -> None:
    for rec in records:
        fh.write(rec.serialize() if hasattr(rec, "serialize") else _dumps(rec))
        fh.write("\n")


def load_dialogs(path: str | Path, **kwargs) -> list[Dialog]:
    with open(path, encoding="utf-8") as fh:
        return parse_dialog_corpus(fh, **kwargs)


def load_annotations(path: str | Path, dialogs=None) -> list[CsiAnnotation]:
    with open(path, encoding="utf-8") as fh:
        return parse_csi_annotations(fh, dialogs)


def load_adaptations(path: str | Path) -> list[AdaptationRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_adaptations(fh)


# -- converter from flat tabular exports ------------------------------------

_DIALOG_COLS = ("dialog_id", "conversation_id", "scene_id", "dialog", "conversation", "id")
_SPEAKER_COLS = ("speaker", "speaker_name", "character", "name")
_TEXT_COLS = ("text", "utterance", "transcript", "line")
_SURFACE_COLS = ("surface", "csi", "item", "cultural_item")
_CATEGORY_COLS = ("category", "csi_category")
_LEVEL_COLS = ("foreignness", "foreignness_level", "level")


def _pick(header: Sequence[str], choices: Sequence[str], what: str) -> str:
    lowered = {h.strip().lower(): h for h in header}
    for c in choices:
        if c in lowered:
            return lowered[c]
    raise CorpusError(f"no {what} column among {list(header)}")


def convert_tabular_dialogs(path: str | Path) -> list[Dialog]:
    """Group a one-row-per-utterance CSV/TSV export into dialogs.

    Row order is kept within a dialog; dialogs appear in first-seen order.
    A ``speaker: text`` value in the text column with an empty speaker column
    is split on the first colon.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        dialect = csv.Sniffer().sniff(sample, delimiters=",\t;")
        reader = csv.DictReader(fh, dialect=dialect)
        header = reader.fieldnames or []
        dcol = _pick(header, _DIALOG_COLS, "dialog id")
        tcol = _pick(header, _TEXT_COLS, "utterance text")
        try:
            scol: str | None = _pick(header, _SPEAKER_COLS, "speaker")
        except CorpusError:
            scol = None
        grouped: dict[str, list[Utterance]] = {}
        for rowno, row in enumerate(reader, start=2):
            text = " ".join((row.get(tcol) or "").split())
            speaker = (row.get(scol) or "").strip() if scol else ""
            try:
                utt = Utterance(speaker, text) if speaker else Utterance.from_line(text)
            except ValueError as exc:
                raise CorpusError(str(exc), rowno) from None
            grouped.setdefault(str(row[dcol]).strip(), []).append(utt)
    return [Dialog(did, tuple(utts)) for did, utts in grouped.items()]


def convert_tabular_annotations(path: str | Path, dialogs: Sequence[Dialog]) -> list[CsiAnnotation]:
    """Turn a one-row-per-occurrence CSV/TSV export into annotation records.

    Occurrence indices are assigned by order of appearance of identical
    surfaces within a dialog.
    """
    path = Path(path)
    by_id = _index(dialogs)
    out: list[CsiAnnotation] = []
    counts: Counter[tuple[str, str]] = Counter()
    with path.open(encoding="utf-8", newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        reader = csv.DictReader(fh, dialect=csv.Sniffer().sniff(sample, delimiters=",\t;"))
        header = reader.fieldnames or []
        dcol = _pick(header, _DIALOG_COLS, "dialog id")
        scol = _pick(header, _SURFACE_COLS, "surface")
        ccol = _pick(header, _CATEGORY_COLS, "category")
        lcol = _pick(header, _LEVEL_COLS, "foreignness")
        for rowno, row in enumerate(reader, start=2):
            did, surface = str(row[dcol]).strip(), (row[scol] or "").strip()
            if did not in by_id:
                raise CorpusError(f"unknown dialog {did!r}", rowno)
            try:
                category = Category.parse(row[ccol] or "")
                level = int(str(row[lcol]).strip())
            except ValueError as exc:
                raise CorpusError(str(exc), rowno) from None
            if level not in (1, 2, 3):
                raise CorpusError(f"foreignness must be 1, 2 or 3, got {level}", rowno)
            occ = counts[(did, surface)]
            counts[(did, surface)] += 1
            out.append(CsiAnnotation(did, surface, category, level, occ, surface_in_dialog(surface, by_id[did])))
    return out
