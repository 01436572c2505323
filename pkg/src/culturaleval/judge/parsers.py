"""Judge output records and the strict parsers that produce them.

Every parser either returns a value or raises :class:`ParseError`. The
pipeline turns a second consecutive failure into a recorded null.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from ..textmatch import normalize

ARROWS = ("→", "->")
NO_EDIT = "No edit found."
DELETION_TAG = "# deletion"
ADDITION_TAG = "# addition"

DIALOG_ASPECTS = ("naturalness", "localisation", "offensiveness", "stereotypical", "content_preservation")


class ParseError(ValueError):
    """The completion does not follow the expected response format."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class ScoreRangeError(ParseError):
    """A score was present but outside its allowed range."""


class Strategy(str, Enum):
    PRESERVATION = "Preservation"
    ADDITION = "Addition"
    OMISSION = "Omission"
    LOCALISATION = "Localisation"
    GLOBALISATION = "Globalisation"
    TRANSFORMATION = "Transformation"
    CREATION = "Creation"


CLASSIFIABLE = (
    Strategy.LOCALISATION,
    Strategy.TRANSFORMATION,
    Strategy.GLOBALISATION,
    Strategy.ADDITION,
    Strategy.OMISSION,
)


@dataclass(frozen=True)
class Edit:
    source: str
    target: str
    kind: str
    utterance_index: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("modify", "insert", "delete"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if (self.kind == "insert") != (not self.source):
            raise ValueError("insert edits have an empty source and nothing else does")
        if (self.kind == "delete") != (not self.target):
            raise ValueError("delete edits have an empty target and nothing else does")

    @classmethod
    def modify(cls, source: str, target: str, utterance_index: int = 0) -> "Edit":
        return cls(source, target, "modify", utterance_index)

    @classmethod
    def insert(cls, target: str, utterance_index: int = 0) -> "Edit":
        return cls("", target, "insert", utterance_index)

    @classmethod
    def delete(cls, source: str, utterance_index: int = 0) -> "Edit":
        return cls(source, "", "delete", utterance_index)

    @property
    def is_noop(self) -> bool:
        return self.kind == "modify" and normalize(self.source) == normalize(self.target)

    def format(self) -> str:
        if self.kind == "delete":
            return f"{self.source} → {DELETION_TAG}"
        if self.kind == "insert":
            return f" → {self.target} {ADDITION_TAG}"
        return f"{self.source} → {self.target}"

    def to_record(self) -> dict:
        return {"source": self.source, "target": self.target, "kind": self.kind, "utterance_index": self.utterance_index}


@dataclass(frozen=True)
class EditScores:
    correctness: int
    localisation: int
    offensiveness: int

    def __post_init__(self) -> None:
        for name, allowed in (("correctness", (0, 1)), ("localisation", (0, 1, 2)), ("offensiveness", (0, 1))):
            value = getattr(self, name)
            if isinstance(value, bool) or value not in allowed:
                raise ScoreRangeError(f"{name}={value!r} outside {allowed}")

    def to_record(self) -> dict:
        return {"correctness": self.correctness, "localisation": self.localisation, "offensiveness": self.offensiveness}


@dataclass(frozen=True)
class DialogScores:
    naturalness: int
    localisation: int
    offensiveness: int
    stereotypical: int
    content_preservation: int
    explanations: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in DIALOG_ASPECTS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 5:
                raise ScoreRangeError(f"{name}={value!r} outside 1..5")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, a) for a in DIALOG_ASPECTS)

    def to_record(self) -> dict:
        return {a: {"score": getattr(self, a), "explanation": self.explanations.get(a, "")} for a in DIALOG_ASPECTS}


# -- edit lists ---------------------------------------------------------------

_BULLET = re.compile(r"^(?:[-*•]\s+|\d+[.)]\s+)")
_IGNORABLE = {"edits:", "edits", ""}


def _split_arrow(line: str) -> tuple[str, str] | None:
    hits = [(line.find(a), a) for a in ARROWS if a in line]
    if not hits:
        return None
    pos, arrow = min(hits)
    return line[:pos], line[pos + len(arrow):]


def _parse_edit_line(line: str) -> Edit | None:
    parts = _split_arrow(line)
    if parts is None:
        return None
    left, right = parts[0].strip(), parts[1].strip()
    if right.endswith(DELETION_TAG):
        right = right[: -len(DELETION_TAG)].strip()
        if left and not right:
            return Edit.delete(left)
        return None
    if right.endswith(ADDITION_TAG):
        right = right[: -len(ADDITION_TAG)].strip()
        if right and not left:
            return Edit.insert(right)
        return None
    if left and right:
        return Edit.modify(left, right)
    return None


def split_edit_lines(raw: str) -> tuple[list[Edit], list[str], bool]:
    """Edits, residue lines, and whether the no-edit sentinel was seen."""
    edits: list[Edit] = []
    residue: list[str] = []
    sentinel = False
    for line in raw.splitlines():
        stripped = line.strip()
        if stripped.lower() in _IGNORABLE:
            continue
        if stripped.rstrip(".").lower() == NO_EDIT.rstrip(".").lower():
            sentinel = True
            continue
        edit = _parse_edit_line(_BULLET.sub("", stripped))
        if edit is None:
            residue.append(stripped)
        else:
            edits.append(edit)
    return edits, residue, sentinel


class EditList(list):
    residue: list[str]


def parse_edit_list(raw: str) -> list[Edit]:
    """Parse the ``X → Y`` edit grammar used by the extraction prompt.

    Lines that fit no form are kept as residue on the returned list's
    ``residue`` attribute rather than dropped.
    """
    edits, residue, sentinel = split_edit_lines(raw)
    if not edits and not sentinel:
        raise ParseError("no edit lines and no 'No edit found.'", raw)
    out = EditList(edits)
    out.residue = residue
    return out


def format_edit_list(edits: list[Edit]) -> str:
    if not edits:
        return NO_EDIT
    return "\n".join(e.format() for e in edits)


# -- edit scores --------------------------------------------------------------

_BRACE_BLOCK = re.compile(r"\{[^{}]*\}", re.S)
_PAIR = re.compile(r"""['"]?([A-Za-z_ ]+?)['"]?\s*:\s*(-?[\d.]+)""")
_EDIT_KEYS = {"correctness": "correctness", "localisation": "localisation", "localization": "localisation",
              "offensiveness": "offensiveness"}


def parse_edit_scores(raw: str) -> EditScores:
    block = _BRACE_BLOCK.search(raw)
    if block is None:
        raise ParseError("no brace-delimited score block", raw)
    found: dict[str, int] = {}
    for key, value in _PAIR.findall(block.group(0)):
        name = _EDIT_KEYS.get(key.strip().lower())
        if name is None or name in found:
            continue
        try:
            found[name] = int(value)
        except ValueError:
            raise ParseError(f"{name} is not an integer: {value!r}", raw) from None
    missing = [k for k in ("correctness", "localisation", "offensiveness") if k not in found]
    if missing:
        raise ParseError(f"missing score keys {missing}", raw)
    try:
        return EditScores(**found)
    except ScoreRangeError as exc:
        raise ScoreRangeError(str(exc), raw) from None


# -- strategies ---------------------------------------------------------------

_STRATEGY_RE = re.compile(
    r"\b(addition|omission|globali[sz]ation|locali[sz]ation|transformation)\b", re.I
)
_STRATEGY_MAP = {
    "addition": Strategy.ADDITION,
    "omission": Strategy.OMISSION,
    "globalisation": Strategy.GLOBALISATION,
    "globalization": Strategy.GLOBALISATION,
    "localisation": Strategy.LOCALISATION,
    "localization": Strategy.LOCALISATION,
    "transformation": Strategy.TRANSFORMATION,
}


def parse_strategy(raw: str) -> Strategy:
    """Last classifiable strategy name in the completion."""
    hits = _STRATEGY_RE.findall(raw)
    if not hits:
        raise ParseError("no strategy name found", raw)
    return _STRATEGY_MAP[hits[-1].lower()]


# -- dialog scores ------------------------------------------------------------

_FENCE = re.compile(r"```(?:json|python)?", re.I)


def _aspect_key(key: str) -> str | None:
    k = "".join(ch for ch in key.lower() if ch.isalpha())
    k = k.replace("localization", "localisation")
    aliases = {
        "naturalness": "naturalness",
        "localisation": "localisation",
        "offensiveness": "offensiveness",
        "stereotypical": "stereotypical",
        "stereotypicalbehavior": "stereotypical",
        "stereotypicalbehaviour": "stereotypical",
        "contentpreservation": "content_preservation",
    }
    return aliases.get(k)


def _objects(text: str):
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        start = m.start()
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            obj = _literal_object(text, start)
        if isinstance(obj, dict):
            yield obj


def _literal_object(text: str, start: int):
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                try:
                    return ast.literal_eval(text[start:i + 1])
                except (ValueError, SyntaxError, MemoryError, RecursionError):
                    return None
    return None


def parse_dialog_scores(raw: str) -> DialogScores:
    text = _FENCE.sub("", raw)
    obj = next(_objects(text), None)
    if obj is None:
        raise ParseError("no well-formed object in completion", raw)
    scores: dict[str, int] = {}
    explanations: dict[str, str] = {}
    for key, value in obj.items():
        aspect = _aspect_key(str(key))
        if aspect is None or aspect in scores:
            continue
        if isinstance(value, dict):
            lowered = {str(k).lower(): v for k, v in value.items()}
            score = lowered.get("score")
            explanations[aspect] = str(lowered.get("explanation", ""))
        else:
            score = value
        if isinstance(score, bool) or not isinstance(score, int):
            raise ParseError(f"{aspect} score is not an integer: {score!r}", raw)
        scores[aspect] = score
    missing = [a for a in DIALOG_ASPECTS if a not in scores]
    if missing:
        raise ParseError(f"missing aspects {missing}", raw)
    try:
        return DialogScores(**scores, explanations=explanations)
    except ScoreRangeError as exc:
        raise ScoreRangeError(str(exc), raw) from None
