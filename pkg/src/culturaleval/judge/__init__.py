"""Prompting, completion backends, caching and judge-output parsing."""

from .backends import (
    CacheError,
    CompletionBackend,
    CompletionError,
    Decoding,
    HttpBackend,
    MockBackend,
    ResponseCache,
    TransientError,
    complete,
)
from .calls import CultureConfig, Judged, ask, dialog_block, generate_adaptation, parse_adapted_utterances
from .parsers import (
    CLASSIFIABLE,
    DIALOG_ASPECTS,
    DialogScores,
    Edit,
    EditScores,
    ParseError,
    ScoreRangeError,
    Strategy,
    format_edit_list,
    parse_dialog_scores,
    parse_edit_list,
    parse_edit_scores,
    parse_strategy,
)
from .prompts import TEMPLATE_IDS, PromptError, PromptTemplate, format_utterance_pair, load_templates, render_prompt

__all__ = [
    "CLASSIFIABLE",
    "DIALOG_ASPECTS",
    "TEMPLATE_IDS",
    "CacheError",
    "CompletionBackend",
    "CompletionError",
    "CultureConfig",
    "Decoding",
    "DialogScores",
    "Edit",
    "EditScores",
    "HttpBackend",
    "Judged",
    "MockBackend",
    "ParseError",
    "PromptError",
    "PromptTemplate",
    "ResponseCache",
    "ScoreRangeError",
    "Strategy",
    "TransientError",
    "ask",
    "complete",
    "dialog_block",
    "format_edit_list",
    "format_utterance_pair",
    "generate_adaptation",
    "load_templates",
    "parse_adapted_utterances",
    "parse_dialog_scores",
    "parse_edit_list",
    "parse_edit_scores",
    "parse_strategy",
    "render_prompt",
]
