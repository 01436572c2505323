from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Generic, Mapping, TypeVar

from ..corpus import TRANSCRIPT_NOTE, AdaptationRecord, Dialog, Utterance
from .backends import CompletionBackend, ResponseCache, complete
from .parsers import ParseError
from .prompts import DEFAULT_TEMPLATES, PromptTemplate, render_prompt

log = logging.getLogger(__name__)

T = TypeVar("T")

_SPEAKER_LINE = re.compile(r"^\**\s*([^:\n]{1,60}?)\s*\**\s*:\s*\**\s*(.*?)\s*$")


@dataclass(frozen=True)
class CultureConfig:
    culture_id: str = "india"
    templates: Mapping[str, PromptTemplate] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))


@dataclass
class Judged(Generic[T]):
    """Outcome of one judge interaction, after the re-query policy."""

    value: T | None
    raw: list[str]
    requeried: bool = False
    error: str | None = None

    @property
    def is_null(self) -> bool:
        return self.value is None


def ask(
    backend: CompletionBackend,
    prompt: str,
    parser: Callable[[str], T],
    cache: ResponseCache | None = None,
    *,
    retries: int = 2,
    backoff: float = 0.5,
) -> Judged[T]:
    """Complete and parse; one re-query on a parse failure, then null."""
    raws: list[str] = []
    error = None
    for attempt in (0, 1):
        raw = complete(backend, prompt, cache, retries=retries, backoff=backoff, attempt=attempt)
        raws.append(raw)
        try:
            return Judged(parser(raw), raws, requeried=attempt > 0)
        except ParseError as exc:
            error = f"{type(exc).__name__}: {exc}"
            log.debug("unparseable judge output (attempt %d): %s", attempt, error)
    return Judged(None, raws, requeried=True, error=error)


def dialog_block(dialog: Dialog | AdaptationRecord) -> str:
    return "\n".join(u.serialize() for u in dialog.utterances)


def parse_adapted_utterances(completion: str, speakers: set[str] | None = None) -> list[Utterance]:
    """Split a completion into ``speaker: text`` utterances.

    Lines before the first speaker line (headers such as ``Adapted
    Version:``) and lines that do not look like utterances are dropped. A
    speaker line needs non-empty text unless it is a transcript note.
    """
    out: list[Utterance] = []
    for line in completion.splitlines():
        m = _SPEAKER_LINE.match(line.strip())
        if not m:
            continue
        speaker, text = m.group(1).strip(), m.group(2).strip().rstrip("*").strip()
        if not speaker or (not text and speaker != TRANSCRIPT_NOTE):
            continue
        if len(speaker.split()) > 5 and (speakers is None or speaker not in speakers):
            continue
        out.append(Utterance(speaker, text))
    return out


def generate_adaptation(
    backend: CompletionBackend,
    dialog: Dialog,
    culture: CultureConfig | None = None,
    cache: ResponseCache | None = None,
    **kwargs,
) -> AdaptationRecord:
    culture = culture or CultureConfig()
    prompt = render_prompt("adapt", {"dialog": dialog_block(dialog)}, culture.templates)
    raw = complete(backend, prompt, cache, **kwargs)
    utterances = parse_adapted_utterances(raw, {u.speaker for u in dialog.utterances})
    return AdaptationRecord(dialog.id, backend.model_id, culture.culture_id, tuple(utterances), raw)
