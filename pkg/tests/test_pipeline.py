import csv
import json
from dataclasses import replace
from pathlib import Path

import pytest

from culturaleval import pipeline, report
from culturaleval.cli import main
from culturaleval.config import ConfigError, apply_overrides, load_config
from culturaleval.judge.backends import MockBackend
from culturaleval.judge.parsers import DIALOG_ASPECTS
from culturaleval.report import SECTIONS

TOY = Path(__file__).parent / "fixtures" / "toy"


def toy_config(tmp_path, name="run", **changes):
    cfg = load_config(TOY / "config.yaml", {"out_dir": tmp_path / name, "cache_dir": tmp_path / f"{name}-cache"})
    return replace(cfg, **changes)


def run_all(cfg):
    assert pipeline.cmd_adapt(cfg) == 0
    assert pipeline.cmd_evaluate(cfg) == 0
    assert report.cmd_report(cfg) == 0


def snapshot(root: Path, *subdirs):
    out = {}
    for sub in subdirs:
        for f in sorted((root / sub).rglob("*")):
            if f.is_file():
                out[str(f.relative_to(root))] = f.read_bytes()
    return out


def test_echo_adapter_gives_identity(tmp_path):
    cfg = toy_config(tmp_path)
    assert pipeline.cmd_adapt(cfg) == 0
    rows = pipeline.read_jsonl(tmp_path / "run" / "adaptations" / "echo.jsonl")
    dialogs = [json.loads(x) for x in (TOY / "dialogs.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    assert [r["utterances"] for r in rows] == [d["utterances"] for d in dialogs]
    structure = pipeline.read_jsonl(tmp_path / "run" / "structure" / "echo.jsonl")
    assert all(s["utterance_count_match"] and not s["speaker_mismatches"] for s in structure)


def test_end_to_end_determinism_and_resumption(tmp_path):
    a = toy_config(tmp_path, "a")
    b = toy_config(tmp_path, "b")
    run_all(a)
    run_all(b)
    first = snapshot(tmp_path / "a", "adaptations", "structure", "evaluation", "report")
    assert first == snapshot(tmp_path / "b", "adaptations", "structure", "evaluation", "report")
    assert any(k.endswith(".png") for k in first)

    (tmp_path / "a" / "evaluation" / "toy-adapter" / "strategies.jsonl").unlink()
    (tmp_path / "a" / "report" / "report.md").unlink()
    assert pipeline.cmd_evaluate(a) == 0
    assert report.cmd_report(a) == 0
    assert snapshot(tmp_path / "a", "adaptations", "structure", "evaluation", "report") == first
    manifest = json.loads((tmp_path / "a" / "manifests" / "evaluate.json").read_text())
    assert manifest["counts"]["cache_misses"] == 0 and manifest["counts"]["cache_hits"] > 0


def test_manifest_contents(tmp_path):
    cfg = toy_config(tmp_path)
    run_all(cfg)
    m = json.loads((tmp_path / "run" / "manifests" / "evaluate.json").read_text())
    assert m["tool_version"] and m["errors"] == []
    assert set(m["inputs"]) >= {"dialogs", "annotations"}
    assert m["config"]["csi_match_threshold"] == 80
    assert "extract.toy-adapter" in m["timings"]


def test_intermediate_files(tmp_path):
    cfg = toy_config(tmp_path)
    run_all(cfg)
    ev = tmp_path / "run" / "evaluation" / "toy-adapter"
    edits = pipeline.read_jsonl(ev / "edits.jsonl")
    assert [(r["dialog_id"], r["utterance_index"]) for r in edits] == sorted((r["dialog_id"], r["utterance_index"]) for r in edits)
    assert {r["status"] for r in edits} <= {"ok", "identical"}
    d01 = [e for r in edits if r["dialog_id"] == "d01" for e in r["edits"]]
    assert {"source": "Parrot Jungle", "target": "Anjuna Flea Market", "kind": "modify", "utterance_index": 4} in d01
    strategies = pipeline.read_jsonl(ev / "strategies.jsonl")
    assert {r["strategy"] for r in strategies} <= {"Localisation", "Transformation", "Globalisation", "Preservation", "Creation", "unaligned"}
    decisions = pipeline.read_jsonl(ev / "csi_decisions.jsonl")
    assert len(decisions) == 24  # foreignness-1 items are excluded
    # echo adaptations: nothing edited, no judge calls for identical pairs
    echo_edits = pipeline.read_jsonl(tmp_path / "run" / "evaluation" / "echo" / "edits.jsonl")
    assert all(r["status"] == "identical" for r in echo_edits)
    assert pipeline.read_jsonl(tmp_path / "run" / "evaluation" / "echo" / "edit_scores.jsonl") == []


def test_report_has_five_sections(tmp_path):
    cfg = toy_config(tmp_path)
    run_all(cfg)
    text = (tmp_path / "run" / "report" / "report.md").read_text()
    for i, title in enumerate(SECTIONS, 1):
        assert f"## {i}. {title}" in text
    assert text.count("Matcher threshold 80") == 5
    assert "judge model `heuristic-judge`" in text
    rows = list(csv.DictReader(open(tmp_path / "run" / "report" / "metrics.csv")))
    assert {r["section"] for r in rows} == {"edit", "dialog", "csi", "strategy"}


def test_zero_annotations_marks_csi_section_empty(tmp_path):
    cfg = toy_config(tmp_path, annotations=None)
    run_all(cfg)
    text = (tmp_path / "run" / "report" / "report.md").read_text()
    section = text.split("## 3.")[1].split("## 4.")[0]
    assert "_Empty:" in section
    m = json.loads((tmp_path / "run" / "manifests" / "evaluate.json").read_text())
    assert any("no annotations" in w for w in m["warnings"])


def test_unparseable_judge_gives_nulls_and_warning(tmp_path, monkeypatch):
    cfg = toy_config(tmp_path)
    assert pipeline.cmd_adapt(cfg) == 0
    real = pipeline.build_backend

    def fake(spec, config, dialogs_by_id=None):
        if spec is config.judge:
            return MockBackend("junk-judge", default="I refuse to answer in any format.")
        return real(spec, config, dialogs_by_id)

    monkeypatch.setattr(pipeline, "build_backend", fake)
    assert pipeline.cmd_evaluate(cfg) == 0
    ev = tmp_path / "run" / "evaluation" / "toy-adapter"
    assert all(r["scores"] is None for r in pipeline.read_jsonl(ev / "dialog_scores.jsonl"))
    assert all(r["status"] == "null" for r in pipeline.read_jsonl(ev / "edits.jsonl") if r["status"] != "identical")
    m = json.loads((tmp_path / "run" / "manifests" / "evaluate.json").read_text())
    assert any("every judge score is null" in w for w in m["warnings"])
    assert m["counts"]["requeries"] > 0
    assert report.cmd_report(cfg) == 0
    text = (tmp_path / "run" / "report" / "report.md").read_text()
    assert "| toy-adapter | n/a | n/a | n/a | n/a | n/a | 0 (10 null) |" in text


EMILY = ("Emily: Yes, I went there due to the crowd at the vegan cafe in the arts district.",
         "Emily: Yes, I went there due to the crowd at the chai stall near the temple.")
DIALOG_JSON = json.dumps({a: {"score": 4, "explanation": "ok"} for a in DIALOG_ASPECTS})


def exemplar_judge(prompt: str) -> str:
    if "Extract edits for following" in prompt:
        return "Edits:\nvegan cafe → chai stall\nin the arts district → near the temple"
    if "Python dictionary format" in prompt:
        return "{'correctness': 1, 'localisation': 2, 'offensiveness': 0}"
    if "Davies defines" in prompt:
        return "Localisation"
    return DIALOG_JSON


def test_exemplar_judge_goldens(tmp_path, monkeypatch):
    d = tmp_path / "in"
    d.mkdir()
    (d / "dialogs.jsonl").write_text(json.dumps({"id": "e1", "utterances": [{"speaker": "Emily", "text": EMILY[0][7:]}]}) + "\n")
    (d / "ann.jsonl").write_text(json.dumps({"dialog_id": "e1", "surface": "vegan cafe", "category": "MaterialCulture", "foreignness": 2}) + "\n")
    (d / "out.json").write_text(json.dumps({"e1": EMILY[1]}))
    (d / "config.yaml").write_text(
        "dialogs: dialogs.jsonl\nannotations: ann.jsonl\nadapters:\n  - {model_id: m, kind: replay, responses: out.json}\n"
        "judge: {model_id: exemplar, kind: heuristic-judge}\nout_dir: run\ncache_dir: cache\nmax_inflight: 1\n"
    )
    cfg = load_config(d / "config.yaml")
    real = pipeline.build_backend
    monkeypatch.setattr(
        pipeline,
        "build_backend",
        lambda spec, config, by_id=None: MockBackend("exemplar", exemplar_judge) if spec is config.judge else real(spec, config, by_id),
    )
    run_all(cfg)
    ev = d / "run" / "evaluation" / "m"
    assert pipeline.read_jsonl(ev / "edits.jsonl") == [
        {
            "dialog_id": "e1",
            "utterance_index": 0,
            "status": "ok",
            "edits": [
                {"source": "vegan cafe", "target": "chai stall", "kind": "modify", "utterance_index": 0},
                {"source": "in the arts district", "target": "near the temple", "kind": "modify", "utterance_index": 0},
            ],
            "residue": [],
        }
    ]
    scores = pipeline.read_jsonl(ev / "edit_scores.jsonl")
    assert [s["scores"] for s in scores] == [{"correctness": 1, "localisation": 2, "offensiveness": 0}] * 2
    [strategy] = pipeline.read_jsonl(ev / "strategies.jsonl")
    assert strategy["surface"] == "vegan cafe" and strategy["strategy"] == "Localisation"
    [dialog] = pipeline.read_jsonl(ev / "dialog_scores.jsonl")
    assert all(dialog["scores"][a]["score"] == 4 for a in DIALOG_ASPECTS)


def test_missing_adaptations_error_names_ids(tmp_path):
    cfg = toy_config(tmp_path)
    pipeline.cmd_adapt(cfg)
    path = tmp_path / "run" / "adaptations" / "echo.jsonl"
    kept = [line for line in path.read_text().splitlines() if '"d03"' not in line and '"d07"' not in line]
    path.write_text("\n".join(kept) + "\n")
    assert pipeline.cmd_evaluate(cfg) == 1
    m = json.loads((tmp_path / "run" / "manifests" / "evaluate.json").read_text())
    assert any("d03" in e and "d07" in e for e in m["errors"])


def test_empty_corpus_adapt_warns(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    cfg = toy_config(tmp_path, dialogs=tmp_path / "empty.jsonl", annotations=None)
    assert pipeline.cmd_adapt(cfg) == 0
    assert (tmp_path / "run" / "adaptations" / "echo.jsonl").read_text() == ""
    m = json.loads((tmp_path / "run" / "manifests" / "adapt.json").read_text())
    assert any("empty" in w for w in m["warnings"])


def test_backend_failure_partial_output_nonzero_exit(tmp_path, monkeypatch):
    cfg = toy_config(tmp_path)
    real = pipeline.build_backend

    def fake(spec, config, dialogs_by_id=None):
        if spec.model_id == "echo":
            return MockBackend("echo", responses={})
        return real(spec, config, dialogs_by_id)

    monkeypatch.setattr(pipeline, "build_backend", fake)
    assert pipeline.cmd_adapt(cfg) == 1
    assert len(pipeline.read_jsonl(tmp_path / "run" / "adaptations" / "toy-adapter.jsonl")) == 10
    assert pipeline.read_jsonl(tmp_path / "run" / "adaptations" / "echo.jsonl") == []
    m = json.loads((tmp_path / "run" / "manifests" / "adapt.json").read_text())
    assert len(m["errors"]) == 10


def write_human(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dialog_id", "rater_id", *DIALOG_ASPECTS])
        for did, values in rows:
            w.writerow([did, "r1", *values])


def write_judge(run_dir, model, rows):
    path = run_dir / "evaluation" / model / "dialog_scores.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_jsonl(path, ({"dialog_id": d, "scores": {a: {"score": v, "explanation": ""} for a, v in zip(DIALOG_ASPECTS, vals)}} for d, vals in rows))


def read_taus(run_dir):
    return {r["aspect"]: r for r in csv.DictReader(open(run_dir / "correlation" / "human_judge.csv"))}


def test_correlate_identical_and_reversed(tmp_path):
    cfg = toy_config(tmp_path)
    judge = [(f"d{i:02d}", [i % 5 + 1] * 5) for i in range(1, 6)]
    write_judge(tmp_path / "run", "toy-adapter", judge)
    write_human(tmp_path / "same.csv", judge)
    assert pipeline.cmd_correlate(cfg, tmp_path / "same.csv") == 0
    assert {r["tau"] for r in read_taus(tmp_path / "run").values()} == {"1.0000"}
    write_human(tmp_path / "rev.csv", [(d, [6 - v for v in vals]) for d, vals in judge])
    assert pipeline.cmd_correlate(cfg, tmp_path / "rev.csv") == 0
    assert {r["tau"] for r in read_taus(tmp_path / "run").values()} == {"-1.0000"}


def test_correlate_reproduces_paper_scale_taus(tmp_path, fixtures):
    vectors = json.loads((fixtures / "table6_vectors.json").read_text())
    n = len(vectors["naturalness"]["human"])
    ids = [f"h{i:02d}" for i in range(n)]
    write_judge(tmp_path / "run", "toy-adapter", [(d, [vectors[a]["judge"][i] for a in DIALOG_ASPECTS]) for i, d in enumerate(ids)])
    write_human(tmp_path / "h.csv", [(d, [vectors[a]["human"][i] for a in DIALOG_ASPECTS]) for i, d in enumerate(ids)])
    assert pipeline.cmd_correlate(toy_config(tmp_path), tmp_path / "h.csv") == 0
    taus = {a: float(r["tau"]) for a, r in read_taus(tmp_path / "run").items()}
    expected = {"naturalness": 0.63, "localisation": 0.60, "content_preservation": 0.39, "stereotypical": 0.47, "offensiveness": 1.00}
    assert {a: round(t, 2) for a, t in taus.items()} == expected


def test_correlate_without_overlap_errors(tmp_path):
    cfg = toy_config(tmp_path)
    write_judge(tmp_path / "run", "toy-adapter", [("d01", [1, 2, 3, 4, 5])])
    write_human(tmp_path / "h.csv", [("zzz", [1, 2, 3, 4, 5])])
    assert pipeline.cmd_correlate(cfg, tmp_path / "h.csv") == 1
    m = json.loads((tmp_path / "run" / "manifests" / "correlate.json").read_text())
    assert any("no scored dialog ids" in e for e in m["errors"])


def test_sampler_is_seeded():
    ids = [f"d{i}" for i in range(50)]
    a = pipeline.sample_dialog_ids(ids, 10, seed=1)
    assert a == pipeline.sample_dialog_ids(ids, 10, seed=1)
    assert a != pipeline.sample_dialog_ids(ids, 10, seed=2)
    assert a == sorted(a, key=ids.index)
    with pytest.raises(ValueError):
        pipeline.sample_dialog_ids(ids, 51, seed=0)


def test_config_validation(tmp_path):
    cfg = toy_config(tmp_path)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"csi_match_threshold": 120}).validate()
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"dialogs": tmp_path / "nope.jsonl"}).validate()
    bad = tmp_path / "bad.yaml"
    bad.write_text("dialogs: x\nadapters: []\njudge: {model_id: j}\nbogus: 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(bad)


def test_cli_end_to_end(tmp_path, capsys):
    common = ["--config", str(TOY / "config.yaml"), "--out-dir", str(tmp_path / "cli"), "--cache-dir", str(tmp_path / "c")]
    assert main(["adapt", *common]) == 0
    assert main(["evaluate", *common, "--csi-match-threshold", "90", "--max-inflight", "2"]) == 0
    assert main(["report", *common, "--csi-match-threshold", "90", "--no-figures"]) == 0
    text = (tmp_path / "cli" / "report" / "report.md").read_text()
    assert "Matcher threshold 90" in text
    assert not (tmp_path / "cli" / "report" / "figures").exists()
    assert main(["validate-corpus", str(TOY / "dialogs.jsonl"), "--annotations", str(TOY / "annotations.jsonl")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["dialogs"] == 10 and stats["csi_occurrences"] == 26


def test_cli_judge_model_override_changes_cache_key(tmp_path):
    common = ["--config", str(TOY / "config.yaml"), "--out-dir", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "c")]
    assert main(["adapt", *common]) == 0
    assert main(["evaluate", *common]) == 0
    assert main(["evaluate", *common, "--judge-model", "other-judge"]) == 0
    m = json.loads((tmp_path / "o" / "manifests" / "evaluate.json").read_text())
    assert m["config"]["judge"]["model_id"] == "other-judge"
    assert m["counts"]["cache_misses"] > 0


def test_cli_reports_bad_input(tmp_path, capsys):
    bad = tmp_path / "d.jsonl"
    bad.write_text("{oops\n")
    assert main(["validate-corpus", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err
