"""Markdown + CSV (+ optional PNG) report bundle built from persisted stage outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .config import RunConfig
from .corpus import Category
from .judge.parsers import CLASSIFIABLE, DIALOG_ASPECTS, Strategy
from .metrics import (
    SCORED_LEVELS,
    DialogAggregate,
    EditAggregate,
    aggregate_dialog_scores,
    aggregate_edit_scores,
    fmt,
    format_edit_row,
    strategy_distribution,
)
from .stats import CorrelationMatrix, TauResult, correlation_matrix

log = logging.getLogger(__name__)

SECTIONS = (
    "Edit-level scores",
    "Dialog-level scores",
    "CSI edited",
    "Translation strategies",
    "Aspect correlation",
)

MATCHER_NOTE = (
    "CSI presence is decided by a token-set fuzzy matcher over sliding windows; "
    "%CSI-edited values depend on the matcher and its threshold."
)

ASPECT_LABELS = {
    "naturalness": "Naturalness",
    "localisation": "Localisation",
    "offensiveness": "Offensiveness",
    "stereotypical": "Stereotypical",
    "content_preservation": "Content preservation",
}


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


def _write(path: Path, text: str) -> None:
    from .pipeline import atomic_write

    atomic_write(path, text)


def footer(config: RunConfig) -> str:
    d = config.decoding
    return (
        f"_Matcher threshold {config.csi_match_threshold} ({config.csi_mode} mode); "
        f"judge model `{config.judge.model_id}`; decoding temperature={d.temperature}, "
        f"max_tokens={d.max_tokens}, seed={d.seed}. {MATCHER_NOTE}_"
    )


def _tau_cell(r: TauResult | None, level: float) -> str:
    if r is None:
        return "n/a"
    return f"{fmt(r.tau)}{'*' if r.p_value < level else ''}"


@dataclass
class ModelResults:
    model_id: str
    edit: EditAggregate | None
    dialog: DialogAggregate | None
    csi_rows: list[dict]
    strategy_rows: list[dict]
    matrix: CorrelationMatrix | None


def _read(path: Path) -> list[dict] | None:
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_model_results(eval_dir: Path, model_id: str, config: RunConfig) -> ModelResults:
    from .judge.parsers import DialogScores, EditScores

    edit_rows = _read(eval_dir / "edit_scores.jsonl")
    dialog_rows = _read(eval_dir / "dialog_scores.jsonl")
    edit = None if edit_rows is None else aggregate_edit_scores(
        None if r["scores"] is None else EditScores(**r["scores"]) for r in edit_rows
    )
    dialog = matrix = None
    if dialog_rows is not None:
        scores = [
            None if r["scores"] is None else DialogScores(**{a: r["scores"][a]["score"] for a in DIALOG_ASPECTS})
            for r in dialog_rows
        ]
        dialog = aggregate_dialog_scores(scores)
        valid = [s for s in scores if s is not None]
        if len(valid) >= 2:
            table = {a: [getattr(s, a) for s in valid] for a in DIALOG_ASPECTS}
            matrix = correlation_matrix(table, config.significance, method=config.p_value_method)
    return ModelResults(
        model_id,
        edit,
        dialog,
        _read(eval_dir / "csi_decisions.jsonl") or [],
        _read(eval_dir / "strategies.jsonl") or [],
        matrix,
    )


def _pct_edited(rows: list[dict]) -> tuple[float | None, int]:
    n = len(rows)
    return (100.0 * sum(r["edited"] for r in rows) / n if n else None), n


def csi_breakdown(rows: list[dict]) -> list[tuple[str, str, float | None, int]]:
    """``(group_type, group, pct_edited, n)`` rows: overall, per category, per level."""
    out = [("overall", "all", *_pct_edited(rows))]
    for c in Category:
        out.append(("category", c.value, *_pct_edited([r for r in rows if r["category"] == c.value])))
    for lvl in SCORED_LEVELS:
        out.append(("foreignness", str(lvl), *_pct_edited([r for r in rows if r["foreignness"] == lvl])))
    return out


def strategy_summary(rows: list[dict]):
    strategies = [
        Strategy(r["strategy"]) for r in rows if r["strategy"] not in (None, "unaligned")
    ]
    unaligned = sum(1 for r in rows if r["strategy"] == "unaligned")
    nulls = sum(1 for r in rows if r["strategy"] is None)
    return strategy_distribution(strategies, unaligned_count=unaligned), nulls


def build_report(config: RunConfig, out_dir: Path | None = None) -> dict[str, str]:
    """Render all report files; returns ``{relative path: text}`` (PNGs written directly)."""
    from .pipeline import model_slug

    run_dir = Path(config.out_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    models = [
        load_model_results(run_dir / "evaluation" / model_slug(s.model_id), s.model_id, config)
        for s in config.adapters
    ]
    foot = footer(config)
    files: dict[str, str] = {}
    md = ["# Cultural adaptation evaluation report", ""]
    metrics_rows: list[list] = []

    # 1. edit-level
    md += [f"## 1. {SECTIONS[0]}", ""]
    rows, csv_rows = [], []
    for m in models:
        e = m.edit
        if e is None:
            rows.append([m.model_id, "missing", "missing", "missing"])
            continue
        rows.append([m.model_id, e.n_edits, format_edit_row(e), e.n_null_scores])
        dist = e.localisation_distribution or (None, None, None)
        values = {
            "n_edits": e.n_edits,
            "pct_correct": fmt(e.pct_correct),
            "avg_localisation": fmt(e.avg_localisation),
            "pct_localisation_0": fmt(dist[0], 1),
            "pct_localisation_1": fmt(dist[1], 1),
            "pct_localisation_2": fmt(dist[2], 1),
            "pct_offensive": fmt(e.pct_offensive),
            "n_null_edit_scores": e.n_null_scores,
        }
        csv_rows.append([m.model_id, *values.values()])
        metrics_rows += [[m.model_id, "edit", k, v] for k, v in values.items()]
    md += [
        _md_table(
            ["Model", "# Edits", "Correct (%) / Avg. localisation / Localisation 0, 1, 2 (%) / Offensive (%)", "Null scores"],
            rows,
        ),
        "",
        foot,
        "",
    ]
    files["edit_scores.csv"] = _csv_text(
        ["model", "n_edits", "pct_correct", "avg_localisation", "pct_localisation_0", "pct_localisation_1",
         "pct_localisation_2", "pct_offensive", "n_null"],
        csv_rows,
    )

    # 2. dialog-level
    md += [f"## 2. {SECTIONS[1]}", ""]
    rows, csv_rows = [], []
    for m in models:
        d = m.dialog
        if d is None:
            rows.append([m.model_id, *["missing"] * len(DIALOG_ASPECTS), "missing"])
            continue
        cells = [fmt(d.means[a]) for a in DIALOG_ASPECTS]
        rows.append([m.model_id, *cells, f"{d.n_dialogs} ({d.n_null} null)"])
        csv_rows.append([m.model_id, *cells, d.n_dialogs, d.n_null])
        metrics_rows += [[m.model_id, "dialog", f"mean_{a}", c] for a, c in zip(DIALOG_ASPECTS, cells)]
        metrics_rows += [[m.model_id, "dialog", "n_dialogs", d.n_dialogs], [m.model_id, "dialog", "n_null", d.n_null]]
    md += [_md_table(["Model", *(ASPECT_LABELS[a] for a in DIALOG_ASPECTS), "Dialogs"], rows), "", foot, ""]
    files["dialog_scores.csv"] = _csv_text(["model", *DIALOG_ASPECTS, "n_dialogs", "n_null"], csv_rows)

    # 3. %CSI edited
    md += [f"## 3. {SECTIONS[2]}", ""]
    breakdowns = {m.model_id: csi_breakdown(m.csi_rows) for m in models}
    if all(not m.csi_rows for m in models):
        md += ["_Empty: no scored CSI annotations (foreignness 2 or 3) were available for this run._", ""]
        files["csi_edited.csv"] = _csv_text(["model", "group_type", "group", "pct_edited", "n"], [])
    else:
        groups = [f"{t}:{g}" if t != "overall" else "overall" for t, g, _, _ in next(iter(breakdowns.values()))]
        header = ["Group", *(m.model_id for m in models)]
        table = []
        for i, label in enumerate(groups):
            table.append([label, *(f"{fmt(breakdowns[m.model_id][i][2])} (n={breakdowns[m.model_id][i][3]})" for m in models)])
        md += [_md_table(header, table), ""]
        csv_rows = [[mid, t, g, fmt(p), n] for mid, rows_ in breakdowns.items() for t, g, p, n in rows_]
        files["csi_edited.csv"] = _csv_text(["model", "group_type", "group", "pct_edited", "n"], csv_rows)
        metrics_rows += [[mid, "csi", f"pct_edited_{t}_{g}", fmt(p)] for mid, rows_ in breakdowns.items() for t, g, p, _ in rows_]
    md += [foot, ""]

    # 4. strategies
    md += [f"## 4. {SECTIONS[3]}", ""]
    summaries = {m.model_id: strategy_summary(m.strategy_rows) for m in models}
    rows, csv_rows = [], []
    for mid, (dist, nulls) in summaries.items():
        rows.append(
            [mid, *(f"{fmt(dist.percentages[s])} ({dist.counts[s]})" for s in CLASSIFIABLE),
             dist.preservation_count, dist.creation_count, dist.unaligned_count, nulls]
        )
        for s in CLASSIFIABLE:
            csv_rows.append([mid, s.value, fmt(dist.percentages[s]), dist.counts[s]])
            metrics_rows.append([mid, "strategy", f"pct_{s.value.lower()}", fmt(dist.percentages[s])])
        for name, count in (("Preservation", dist.preservation_count), ("Creation", dist.creation_count),
                            ("unaligned", dist.unaligned_count), ("null", nulls)):
            csv_rows.append([mid, name, "", count])
            metrics_rows.append([mid, "strategy", f"count_{name.lower()}", count])
    md += [
        _md_table(
            ["Model", *(f"{s.value} % (n)" for s in CLASSIFIABLE), "Preservation", "Creation", "Unaligned", "Null"],
            rows,
        ),
        "",
        "_Percentages are over classified CSI edits; Preservation, Creation, unaligned and null are counts outside the denominator._",
        "",
        foot,
        "",
    ]
    files["strategies.csv"] = _csv_text(["model", "strategy", "pct", "count"], csv_rows)

    # 5. correlation
    md += [f"## 5. {SECTIONS[4]}", ""]
    human_md = run_dir / "correlation" / "human_judge.md"
    if human_md.exists():
        md += ["### Human vs judge", "", human_md.read_text(encoding="utf-8").strip(), ""]
    labels = [ASPECT_LABELS[a] for a in DIALOG_ASPECTS]
    for m in models:
        md += [f"### Inter-aspect τ-b: {m.model_id}", ""]
        if m.matrix is None:
            md += ["_Not enough scored dialogs for a correlation matrix._", ""]
            continue
        rows = [
            [ASPECT_LABELS[a], *(_tau_cell(m.matrix.entries[(a, b)], config.significance) for b in DIALOG_ASPECTS)]
            for a in DIALOG_ASPECTS
        ]
        md += [_md_table(["", *labels], rows), ""]
        files[f"correlation_{model_slug(m.model_id)}.csv"] = matrix_csv(m.matrix)
    md += [f"_`*` marks p < {config.significance} ({config.p_value_method} p-values)._", "", foot, ""]

    files["metrics.csv"] = _csv_text(["model", "section", "metric", "value"], metrics_rows)
    files["report.md"] = "\n".join(md)
    for name, text in files.items():
        _write(out_dir / name, text)
    if config.figures:
        render_figures(out_dir / "figures", models, breakdowns, summaries)
    return files


def matrix_csv(matrix: CorrelationMatrix) -> str:
    rows = []
    for a in matrix.aspects:
        for b in matrix.aspects:
            r = matrix.entries[(a, b)]
            rows.append([a, b, fmt(r.tau, 4) if r else "", fmt(r.p_value, 4) if r else "",
                         r.band if r else "", int(matrix.significant(a, b))])
    return _csv_text(["aspect_a", "aspect_b", "tau", "p_value", "band", "significant"], rows)


def render_figures(fig_dir: Path, models: list[ModelResults], breakdowns, summaries) -> None:
    from .figures import grouped_bars, heatmap
    from .pipeline import model_slug

    if any(m.csi_rows for m in models):
        cats = [c.value for c in Category]
        grouped_bars(
            fig_dir / "csi_edited_by_category.png",
            cats,
            {mid: [p for t, _, p, _ in rows if t == "category"] for mid, rows in breakdowns.items()},
            title="CSI edited by category",
            ylabel="% edited",
        )
        grouped_bars(
            fig_dir / "csi_edited_by_foreignness.png",
            [f"level {lvl}" for lvl in SCORED_LEVELS],
            {mid: [p for t, _, p, _ in rows if t == "foreignness"] for mid, rows in breakdowns.items()},
            title="CSI edited by foreignness",
            ylabel="% edited",
        )
    grouped_bars(
        fig_dir / "strategies.png",
        [s.value for s in CLASSIFIABLE],
        {mid: list(dist.as_tuple()) for mid, (dist, _) in summaries.items()},
        title="Translation strategies",
        ylabel="% of classified CSI edits",
    )
    for m in models:
        if m.matrix is not None:
            heatmap(
                fig_dir / f"correlation_{model_slug(m.model_id)}.png",
                [ASPECT_LABELS[a] for a in DIALOG_ASPECTS],
                [[m.matrix.tau(a, b) for b in DIALOG_ASPECTS] for a in DIALOG_ASPECTS],
                title=f"Aspect correlation ({m.model_id})",
            )


def write_correlation_outputs(
    out_dir: Path,
    model_id: str,
    ids: Sequence[str],
    results: Mapping[str, TauResult | str],
    matrices: Mapping[str, CorrelationMatrix],
    config: RunConfig,
) -> None:
    from .pipeline import model_slug

    rows, md_rows = [], []
    for a in DIALOG_ASPECTS:
        r = results[a]
        if isinstance(r, TauResult):
            sig = r.p_value < config.significance
            rows.append([a, fmt(r.tau, 4), fmt(r.p_value, 4), r.n, r.band, r.method, int(sig)])
            md_rows.append([ASPECT_LABELS[a], f"{fmt(r.tau)}{'*' if sig else ''}", fmt(r.p_value, 4), r.band])
        else:
            rows.append([a, "", "", len(ids), "", config.p_value_method, 0])
            md_rows.append([ASPECT_LABELS[a], "n/a", "n/a", r])
    _write(out_dir / "human_judge.csv", _csv_text(["aspect", "tau", "p_value", "n", "band", "method", "significant"], rows))
    text = _md_table(["Aspect", "τ-b", "p-value", "Band"], md_rows)
    text += f"\n\n_Judge model `{config.judge.model_id}` scoring adaptations from `{model_id}`; {len(ids)} dialogs; `*` marks p < {config.significance} ({config.p_value_method} p-values)._\n"
    _write(out_dir / "human_judge.md", text)
    for mid, matrix in matrices.items():
        _write(out_dir / f"inter_aspect_{model_slug(mid)}.csv", matrix_csv(matrix))


def cmd_report(config: RunConfig) -> int:
    from .pipeline import RunManifest, model_slug

    config.validate()
    manifest = RunManifest("report", config.snapshot())
    run_dir = Path(config.out_dir)
    for spec in config.adapters:
        d = run_dir / "evaluation" / model_slug(spec.model_id)
        for name in ("edit_scores.jsonl", "dialog_scores.jsonl", "csi_decisions.jsonl", "strategies.jsonl"):
            if not (d / name).exists():
                manifest.error(f"report: missing {d / name}; run 'evaluate' first")
    if not manifest.errors:
        with manifest.stage("report"):
            files = build_report(config)
        manifest.counts["files"] = len(files)
    manifest.write(run_dir)
    return manifest.exit_code
