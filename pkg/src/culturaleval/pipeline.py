"""Stage orchestration for the ``adapt``, ``evaluate`` and ``correlate`` commands.

Every LLM interaction goes through the response cache, so re-running a
command with an unchanged cache reproduces its outputs byte for byte. All
intermediate results are persisted as JSON Lines under the run directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

from . import __version__
from .config import RunConfig, build_backend
from .corpus import (
    AdaptationRecord,
    CorpusError,
    CsiAnnotation,
    Dialog,
    load_adaptations,
    load_annotations,
    load_dialogs,
    validate_adaptation_structure,
)
from .judge.backends import CacheError, CompletionError, ResponseCache
from .judge.calls import CultureConfig, Judged, ask, dialog_block, generate_adaptation
from .judge.parsers import (
    DIALOG_ASPECTS,
    DialogScores,
    Edit,
    EditScores,
    Strategy,
    parse_dialog_scores,
    parse_edit_list,
    parse_edit_scores,
    parse_strategy,
)
from .judge.prompts import format_utterance_pair, load_templates, render_prompt
from .metrics import align_edits_to_csi, csi_edited_percentage
from .stats import correlation_matrix, kendall_tau_b, load_human_ratings, UndefinedTauError

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class PipelineError(RuntimeError):
    pass


def model_slug(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", model_id).strip("_") or "model"


# -- run bookkeeping ----------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def bump(self, key: str, n: int = 1) -> None:
        with self._lock:
            self.counts[key] = self.counts.get(key, 0) + n

    def error(self, message: str) -> None:
        log.error(message)
        with self._lock:
            self.errors.append(message)

    def warn(self, message: str) -> None:
        log.warning(message)
        with self._lock:
            self.warnings.append(message)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(self.timings.get(name, 0.0) + time.perf_counter() - t0, 6)

    def hash_input(self, label: str, path: Path | None) -> None:
        if path is None or not Path(path).exists():
            return
        p = Path(path)
        if p.is_dir():
            h = hashlib.sha256()
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    h.update(str(f.relative_to(p)).encode())
                    h.update(f.read_bytes())
            self.inputs[label] = h.hexdigest()
        else:
            self.inputs[label] = hashlib.sha256(p.read_bytes()).hexdigest()

    @property
    def exit_code(self) -> int:
        return 1 if self.errors else 0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "tool_version": self.tool_version,
            "config": self.config,
            "inputs": self.inputs,
            "timings": self.timings,
            "counts": dict(sorted(self.counts.items())),
            "errors": self.errors,
            "warnings": self.warnings,
        }

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifests" / f"{self.command}.json"
        atomic_write(path, json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n")
        return path


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_jsonl(path: Path, records: Iterable[Mapping]) -> None:
    atomic_write(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def fan_out(fn: Callable[[T], R], items: Sequence[T], max_inflight: int) -> list[R]:
    """Apply ``fn`` concurrently; results come back in input order."""
    if max_inflight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        return list(pool.map(fn, items))


@dataclass
class Run:
    config: RunConfig
    manifest: RunManifest
    cache: ResponseCache
    dialogs: list[Dialog]
    annotations: list[CsiAnnotation]

    @property
    def out(self) -> Path:
        return Path(self.config.out_dir)

    @property
    def by_id(self) -> dict[str, Dialog]:
        return {d.id: d for d in self.dialogs}

    def adaptations_path(self, model_id: str) -> Path:
        return self.out / "adaptations" / f"{model_slug(model_id)}.jsonl"

    def structure_path(self, model_id: str) -> Path:
        return self.out / "structure" / f"{model_slug(model_id)}.jsonl"

    def eval_dir(self, model_id: str) -> Path:
        return self.out / "evaluation" / model_slug(model_id)

    def judged(self, backend, prompt: str, parser, label: str) -> Judged:
        try:
            result = ask(
                backend, prompt, parser, self.cache, retries=self.config.retries, backoff=self.config.backoff
            )
        except (CompletionError, CacheError) as exc:
            self.manifest.error(f"{label}: {exc}")
            self.manifest.bump(f"null.{label}")
            return Judged(None, [], error=str(exc))
        if result.requeried:
            self.manifest.bump("requeries")
        if result.is_null:
            self.manifest.bump(f"null.{label}")
        return result


def open_run(command: str, config: RunConfig, *, need_annotations: bool = False) -> Run:
    config.validate()
    manifest = RunManifest(command, config.snapshot())
    manifest.hash_input("dialogs", config.dialogs)
    manifest.hash_input("annotations", config.annotations)
    manifest.hash_input("creation_lexicon", config.creation_lexicon)
    manifest.hash_input("prompt_dir", config.prompt_dir)
    for spec in (*config.adapters, config.judge):
        manifest.hash_input(f"responses.{spec.model_id}", spec.responses)
    with manifest.stage("load"):
        dialogs = load_dialogs(
            config.dialogs, permissive=config.permissive, count_transcript_notes=config.count_transcript_notes
        )
        annotations: list[CsiAnnotation] = []
        if config.annotations is not None:
            annotations = load_annotations(config.annotations, dialogs)
        elif need_annotations:
            manifest.warn("no annotations configured; %CSI-edited and strategy sections will be empty")
    unlocated = sum(1 for a in annotations if not a.located)
    if unlocated:
        manifest.warn(f"{unlocated} annotation surface(s) not found in their dialog")
    return Run(config, manifest, ResponseCache(config.cache_dir), dialogs, annotations)


def finish(run: Run) -> int:
    run.manifest.counts["cache_hits"] = run.cache.hits
    run.manifest.counts["cache_misses"] = run.cache.misses
    run.manifest.write(run.out)
    return run.manifest.exit_code


# -- adapt --------------------------------------------------------------------


def cmd_adapt(config: RunConfig) -> int:
    run = open_run("adapt", config)
    if not run.dialogs:
        run.manifest.warn("corpus is empty; nothing to adapt")
    culture = CultureConfig(config.target_culture, load_templates(config.prompt_dir))
    for spec in config.adapters:
        backend = build_backend(spec, config, run.by_id)

        def one(dialog: Dialog, backend=backend) -> AdaptationRecord | None:
            try:
                return generate_adaptation(
                    backend, dialog, culture, run.cache, retries=config.retries, backoff=config.backoff
                )
            except (CompletionError, CacheError) as exc:
                run.manifest.error(f"adapt {spec.model_id} {dialog.id}: {exc}")
                return None

        with run.manifest.stage(f"adapt.{spec.model_id}"):
            records = fan_out(one, run.dialogs, config.max_inflight)
        done = [r for r in records if r is not None]
        write_jsonl(run.adaptations_path(spec.model_id), (r.to_record() for r in done))
        reports = [validate_adaptation_structure(run.by_id[r.dialog_id], r) for r in done]
        write_jsonl(run.structure_path(spec.model_id), (s.to_record() for s in reports))
        run.manifest.bump(f"adaptations.{spec.model_id}", len(done))
        flagged = sum(1 for s in reports if not s.clean)
        if flagged:
            run.manifest.warn(f"{spec.model_id}: {flagged} adaptation(s) violate the utterance/speaker structure")
    return finish(run)


# -- evaluate -----------------------------------------------------------------


def _read_adaptations(run: Run, model_id: str) -> dict[str, AdaptationRecord]:
    path = run.adaptations_path(model_id)
    if not path.exists():
        raise PipelineError(f"no adaptations for {model_id!r} at {path}; run 'adapt' first")
    records = {r.dialog_id: r for r in load_adaptations(path) if r.model_id == model_id}
    missing = [d.id for d in run.dialogs if d.id not in records]
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise PipelineError(f"{model_id}: missing adaptations for dialog ids: {shown}")
    return records


def _load_lexicon(path: Path | None) -> list[str]:
    if path is None:
        return []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def cmd_evaluate(config: RunConfig) -> int:
    run = open_run("evaluate", config, need_annotations=True)
    judge = build_backend(config.judge, config)
    templates = load_templates(config.prompt_dir)
    lexicon = _load_lexicon(config.creation_lexicon)
    for spec in config.adapters:
        try:
            adaptations = _read_adaptations(run, spec.model_id)
        except (PipelineError, CorpusError) as exc:
            run.manifest.error(str(exc))
            continue
        evaluate_model(run, spec.model_id, adaptations, judge, templates, lexicon)
    return finish(run)


def evaluate_model(run: Run, model_id: str, adaptations, judge, templates, lexicon) -> None:
    cfg = run.config
    out = run.eval_dir(model_id)
    by_id = run.by_id
    m = run.manifest
    pairs = [(by_id[d.id], adaptations[d.id]) for d in run.dialogs]

    with m.stage(f"structure.{model_id}"):
        reports = [validate_adaptation_structure(o, a) for o, a in pairs]
        write_jsonl(run.structure_path(model_id), (r.to_record() for r in reports))

    with m.stage(f"csi.{model_id}"):
        csi = csi_edited_percentage(run.annotations, adaptations, cfg.csi_match_threshold, mode=cfg.csi_mode)
        write_jsonl(
            out / "csi_decisions.jsonl",
            (
                {**a.to_record(), "edited": d.edited, "match_score": d.match_score, "matched_window": d.matched_window}
                for a, d in csi.per_csi.items()
            ),
        )
        if csi.missing_adaptations:
            m.warn(f"{model_id}: {len(csi.missing_adaptations)} annotated dialog(s) lack an adaptation")

    # edit extraction, one judge call per index-aligned utterance pair
    with m.stage(f"extract.{model_id}"):
        jobs = []
        tail = []
        for o, a in pairs:
            n = min(len(o.utterances), len(a.utterances))
            for i in range(n):
                jobs.append((o.id, i, o.utterances[i], a.utterances[i]))
            for i in range(n, max(len(o.utterances), len(a.utterances))):
                tail.append((o.id, i))

        def extract(job):
            did, i, uo, ua = job
            if uo.serialize() == ua.serialize():
                return {"status": "identical", "edits": [], "residue": []}
            prompt = render_prompt("extract_edits", format_utterance_pair(uo.serialize(), ua.serialize()), templates)
            res = run.judged(judge, prompt, parse_edit_list, "extract_edits")
            if res.is_null:
                return {"status": "null", "edits": [], "residue": [], "error": res.error}
            edits = [e for e in res.value if not e.is_noop]
            return {"status": "ok", "edits": edits, "residue": list(res.value.residue)}

        extracted = fan_out(extract, jobs, cfg.max_inflight)
        edits_by_dialog: dict[str, list[Edit]] = {}
        edit_rows = []
        for (did, i, _, _), res in zip(jobs, extracted):
            placed = [Edit(e.source, e.target, e.kind, i) for e in res["edits"]]
            edits_by_dialog.setdefault(did, []).extend(placed)
            row = {
                "dialog_id": did,
                "utterance_index": i,
                "status": res["status"],
                "edits": [e.to_record() for e in placed],
                "residue": res["residue"],
            }
            if res.get("error"):
                row["error"] = res["error"]
            edit_rows.append(row)
        edit_rows.extend(
            {"dialog_id": did, "utterance_index": i, "status": "unaligned-tail", "edits": [], "residue": []}
            for did, i in tail
        )
        edit_rows.sort(key=lambda r: (r["dialog_id"], r["utterance_index"]))
        write_jsonl(out / "edits.jsonl", edit_rows)
        m.bump(f"edits.{model_id}", sum(len(v) for v in edits_by_dialog.values()))

    blocks = {d.id: (dialog_block(d), dialog_block(adaptations[d.id])) for d in run.dialogs}

    with m.stage(f"score_edits.{model_id}"):
        edit_jobs = [
            (did, k, e) for did in sorted(edits_by_dialog) for k, e in enumerate(edits_by_dialog[did])
        ]

        def score(job):
            did, _, e = job
            o_text, a_text = blocks[did]
            prompt = render_prompt("score_edit", {"original": o_text, "adapted": a_text, "edit": e.format()}, templates)
            return run.judged(judge, prompt, parse_edit_scores, "score_edit")

        scored = fan_out(score, edit_jobs, cfg.max_inflight)
        write_jsonl(
            out / "edit_scores.jsonl",
            (
                {
                    "dialog_id": did,
                    "ordinal": k,
                    **e.to_record(),
                    "scores": None if r.is_null else r.value.to_record(),
                    **({"error": r.error} if r.is_null else {}),
                }
                for (did, k, e), r in zip(edit_jobs, scored)
            ),
        )

    with m.stage(f"strategies.{model_id}"):
        alignment = align_edits_to_csi(
            edits_by_dialog, run.annotations, csi, cfg.csi_match_threshold, creation_lexicon=lexicon
        )

        def classify(item):
            ann, e, _ = item
            o_text, a_text = blocks[ann.dialog_id]
            prompt = render_prompt(
                "classify_strategy", {"original": o_text, "adapted": a_text, "edit": e.format()}, templates
            )
            return run.judged(judge, prompt, parse_strategy, "classify_strategy")

        classified = fan_out(classify, list(alignment.aligned), cfg.max_inflight)
        rows = []
        for (ann, e, match), r in zip(alignment.aligned, classified):
            rows.append(
                {
                    **ann.to_record(),
                    "edit": e.to_record(),
                    "match_score": match,
                    "strategy": None if r.is_null else r.value.value,
                    "assigned_by": "classifier",
                }
            )
        for ann in alignment.preserved:
            rows.append({**ann.to_record(), "edit": None, "strategy": Strategy.PRESERVATION.value, "assigned_by": "alignment"})
        for ann in alignment.unaligned:
            rows.append({**ann.to_record(), "edit": None, "strategy": "unaligned", "assigned_by": "alignment"})
        for did, e in alignment.creation:
            rows.append({"dialog_id": did, "edit": e.to_record(), "strategy": Strategy.CREATION.value, "assigned_by": "alignment"})
        rows.sort(key=lambda r: (r["dialog_id"], r.get("surface", ""), r.get("occurrence_index", -1), json.dumps(r["edit"], sort_keys=True)))
        write_jsonl(out / "strategies.jsonl", rows)

    with m.stage(f"score_dialogs.{model_id}"):

        def score_dialog(d: Dialog):
            o_text, a_text = blocks[d.id]
            prompt = render_prompt("score_dialog", {"original": o_text, "adapted": a_text}, templates)
            return run.judged(judge, prompt, parse_dialog_scores, "score_dialog")

        dialog_scores = fan_out(score_dialog, run.dialogs, cfg.max_inflight)
        write_jsonl(
            out / "dialog_scores.jsonl",
            (
                {"dialog_id": d.id, "scores": None if r.is_null else r.value.to_record(), **({"error": r.error} if r.is_null else {})}
                for d, r in zip(run.dialogs, dialog_scores)
            ),
        )

    nulls = sum(1 for r in scored if r.is_null) + sum(1 for r in dialog_scores if r.is_null)
    total = len(scored) + len(dialog_scores)
    if total and nulls == total:
        m.warn(f"{model_id}: every judge score is null; aggregates are undefined")


# -- reading persisted stage outputs ------------------------------------------


def read_edit_scores(path: Path) -> list[EditScores | None]:
    return [None if r["scores"] is None else EditScores(**r["scores"]) for r in read_jsonl(path)]


def read_dialog_scores(path: Path) -> dict[str, DialogScores | None]:
    out: dict[str, DialogScores | None] = {}
    for r in read_jsonl(path):
        s = r["scores"]
        out[r["dialog_id"]] = None if s is None else DialogScores(
            **{a: s[a]["score"] for a in DIALOG_ASPECTS}, explanations={a: s[a].get("explanation", "") for a in DIALOG_ASPECTS}
        )
    return out


def read_strategies(path: Path) -> list[dict]:
    return read_jsonl(path)


# -- correlate ----------------------------------------------------------------


@dataclass(frozen=True)
class HumanJudgeCorrelation:
    model_id: str
    dialog_ids: tuple[str, ...]
    results: Mapping[str, Any]


def human_judge_correlation(
    human: Mapping[str, Mapping[str, float]],
    judge: Mapping[str, DialogScores | None],
    *,
    method: str = "normal",
) -> tuple[tuple[str, ...], dict]:
    ids = tuple(sorted(d for d in human if judge.get(d) is not None))
    if not ids:
        raise PipelineError("human ratings share no scored dialog ids with the judge output")
    results = {}
    for a in DIALOG_ASPECTS:
        xs = [human[d][a] for d in ids]
        ys = [getattr(judge[d], a) for d in ids]
        try:
            results[a] = kendall_tau_b(xs, ys, method=method)
        except (UndefinedTauError, ValueError) as exc:
            results[a] = str(exc)
    return ids, results


def aspect_table(scores: Mapping[str, DialogScores | None]) -> dict[str, list[int]]:
    valid = [scores[d] for d in sorted(scores) if scores[d] is not None]
    return {a: [getattr(s, a) for s in valid] for a in DIALOG_ASPECTS}


def cmd_correlate(config: RunConfig, human_csv: Path | None = None) -> int:
    from .report import write_correlation_outputs

    run = open_run("correlate", config)
    human_path = human_csv or config.human_ratings
    if human_path is None:
        run.manifest.error("no human ratings given (--human or human_ratings in config)")
        return finish(run)
    run.manifest.hash_input("human_ratings", Path(human_path))
    model_id = config.human_eval_model or (config.adapters[0].model_id if config.adapters else None)
    try:
        human = load_human_ratings(human_path)
        judge_scores = read_dialog_scores(run.eval_dir(model_id) / "dialog_scores.jsonl")
        ids, results = human_judge_correlation(human, judge_scores, method=config.p_value_method)
    except (PipelineError, ValueError, OSError) as exc:
        run.manifest.error(f"correlate: {exc}")
        return finish(run)
    run.manifest.bump("human_overlap", len(ids))
    matrices = {}
    for spec in config.adapters:
        path = run.eval_dir(spec.model_id) / "dialog_scores.jsonl"
        if path.exists():
            matrices[spec.model_id] = correlation_matrix(
                aspect_table(read_dialog_scores(path)), config.significance, method=config.p_value_method
            )
    write_correlation_outputs(run.out / "correlation", model_id, ids, results, matrices, config)
    return finish(run)


def sample_dialog_ids(ids: Sequence[str], k: int, seed: int) -> list[str]:
    """Seeded sample of dialog ids for human evaluation, in corpus order."""
    if k > len(ids):
        raise ValueError(f"cannot sample {k} of {len(ids)} dialogs")
    chosen = set(random.Random(seed).sample(list(ids), k))
    return [d for d in ids if d in chosen]
