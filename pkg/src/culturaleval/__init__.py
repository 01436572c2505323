"""Evaluate cultural adaptations of dialog corpora with LLM judges."""

__version__ = "0.1.0"

from .corpus import (  # noqa: E402
    AdaptationRecord,
    Category,
    CorpusError,
    CsiAnnotation,
    Dialog,
    Utterance,
    corpus_stats,
    parse_csi_annotations,
    parse_dialog_corpus,
    validate_adaptation_structure,
)
from .metrics import (  # noqa: E402
    aggregate_dialog_scores,
    aggregate_edit_scores,
    align_edits_to_csi,
    csi_edited_percentage,
    format_edit_row,
    strategy_distribution,
)
from .stats import correlation_matrix, interpret_tau, kendall_tau_b  # noqa: E402
from .textmatch import contains_fuzzy, similarity_ratio, token_set_ratio  # noqa: E402

__all__ = [
    "__version__",
    "AdaptationRecord",
    "Category",
    "CorpusError",
    "CsiAnnotation",
    "Dialog",
    "Utterance",
    "aggregate_dialog_scores",
    "aggregate_edit_scores",
    "align_edits_to_csi",
    "contains_fuzzy",
    "corpus_stats",
    "correlation_matrix",
    "csi_edited_percentage",
    "format_edit_row",
    "interpret_tau",
    "kendall_tau_b",
    "parse_csi_annotations",
    "parse_dialog_corpus",
    "similarity_ratio",
    "strategy_distribution",
    "token_set_ratio",
    "validate_adaptation_structure",
]
