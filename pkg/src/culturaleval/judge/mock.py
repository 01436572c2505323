"""Deterministic offline stand-ins for adapter and judge models.

They exist so the whole pipeline can run without network access: tests,
demos and smoke runs. Nothing here tries to be a good judge.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends import Decoding, MockBackend

_ADAPT_MARKER = "What is the adapted version for the following dialogue :\n"
_EXTRACT_RE = re.compile(r'Extract edits for following :\nOriginal text : "(.*)"\nModified text : "(.*)"\n?$', re.S)
_DIALOG_RE = re.compile(r"Original Dialog:\n(.*?)\n\nAdapted Dialog:\n(.*?)\n\nBased on", re.S)


def echo_adapter(model_id: str = "echo") -> MockBackend:
    """Adapter that returns the dialog it was asked to adapt."""

    def respond(prompt: str) -> str:
        _, _, dialog = prompt.rpartition(_ADAPT_MARKER)
        return dialog.rstrip("\n")

    return MockBackend(model_id=model_id, responses=respond)


def replay_adapter(model_id: str, outputs: Mapping[str, str]) -> MockBackend:
    """Adapter returning canned completions keyed by the original dialog text."""

    def respond(prompt: str) -> str:
        _, _, dialog = prompt.rpartition(_ADAPT_MARKER)
        return outputs.get(dialog.rstrip("\n"), "I cannot adapt this.")

    return MockBackend(model_id=model_id, responses=respond)


def word_edits(original: str, adapted: str) -> list[str]:
    """Edit lines from a word-level diff, in the extraction prompt's grammar."""
    a, b = original.split(), adapted.split()
    lines = []
    for op, i1, i2, j1, j2 in difflib.SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes():
        src, dst = " ".join(a[i1:i2]), " ".join(b[j1:j2])
        if op == "replace":
            lines.append(f"{src} → {dst}")
        elif op == "delete":
            lines.append(f"{src} → # deletion")
        elif op == "insert":
            lines.append(f" → {dst} # addition")
    return lines


def _digest(*parts: str) -> int:
    return int(hashlib.sha256("\x00".join(parts).encode("utf-8")).hexdigest()[:8], 16)


@dataclass
class HeuristicJudge(MockBackend):
    """Rule-based judge: diff-based edits, hash-derived but stable scores."""

    model_id: str = "heuristic-judge"
    decoding: Decoding = field(default_factory=Decoding)

    def generate(self, prompt: str, attempt: int = 0) -> str:
        self.calls += 1
        m = _EXTRACT_RE.search(prompt)
        if m:
            _, _, orig = m.group(1).partition(": ")
            _, _, adapted = m.group(2).partition(": ")
            lines = word_edits(orig, adapted)
            return "Edits:\n" + ("\n".join(lines) if lines else "No edit found.")
        if "Python dictionary format" in prompt:
            edit = prompt.rstrip("\n").rsplit("\n", 1)[-1]
            h = _digest("score", edit)
            loc = 2 if h % 4 else 1
            return f"{{'correctness': {int(h % 10 != 0)}, 'localisation': {loc}, 'offensiveness': 0}}"
        if "Davies defines" in prompt:
            edit = prompt.rstrip("\n").rsplit("\n", 1)[-1]
            name = ("Localization", "Localization", "Transformation", "Globalization")[_digest("strategy", edit) % 4]
            return f"The strategy used in this edit is {name}."
        m = _DIALOG_RE.search(prompt)
        if m:
            original, adapted = m.group(1), m.group(2)
            ratio = difflib.SequenceMatcher(a=original.split(), b=adapted.split(), autojunk=False).ratio()
            changed = 1.0 - ratio
            scores = {
                "naturalness": 5 - min(2, int(changed * 6)),
                "localisation": 1 + min(4, int(changed * 12)),
                "offensiveness": 1,
                "stereotypical": 1 + min(2, int(changed * 4)),
                "content_preservation": 5 - min(3, int(changed * 8)),
            }
            body = {a: {"score": s, "explanation": f"changed fraction {changed:.2f}"} for a, s in scores.items()}
            return "```json\n" + json.dumps(body, indent=1) + "\n```"
        return "I do not understand the request."


def load_replay_file(path: str | Path) -> dict[str, str]:
    """``{"<original dialog text>": "<completion>"}`` mapping from JSON."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected an object mapping dialog text to completion")
    return {str(k): str(v) for k, v in data.items()}

