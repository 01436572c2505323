"""Run configuration: one declarative YAML (or JSON) file plus CLI overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .judge.backends import DEFAULT_API_KEY_ENV, Decoding, HttpBackend, MockBackend
from .judge.mock import HeuristicJudge, echo_adapter, load_replay_file, replay_adapter
from .textmatch import DEFAULT_THRESHOLD

BACKEND_KINDS = ("http", "echo", "replay", "canned", "heuristic-judge")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    model_id: str
    kind: str = "http"
    endpoint: str | None = None
    wire: str = "simple"
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float | None = None
    max_tokens: int | None = None
    seed: int | None = None
    # replay: JSON {dialog_id: completion}; canned: JSON {prompt: completion}
    responses: Path | None = None
    default_response: str | None = None

    def decoding(self, base: Decoding) -> Decoding:
        return Decoding(
            temperature=base.temperature if self.temperature is None else self.temperature,
            max_tokens=base.max_tokens if self.max_tokens is None else self.max_tokens,
            seed=base.seed if self.seed is None else self.seed,
        )


@dataclass(frozen=True)
class RunConfig:
    dialogs: Path
    adapters: tuple[BackendSpec, ...]
    judge: BackendSpec
    annotations: Path | None = None
    human_ratings: Path | None = None
    human_eval_model: str | None = None
    target_culture: str = "india"
    csi_match_threshold: int = DEFAULT_THRESHOLD
    csi_mode: str = "occurrence"
    decoding: Decoding = field(default_factory=Decoding)
    cache_dir: Path = Path(".culturaleval-cache")
    out_dir: Path = Path("runs/latest")
    significance: float = 0.05
    p_value_method: str = "normal"
    max_inflight: int = 4
    retries: int = 2
    backoff: float = 0.5
    creation_lexicon: Path | None = None
    prompt_dir: Path | None = None
    count_transcript_notes: bool = True
    permissive: bool = False
    figures: bool = True

    def validate(self) -> "RunConfig":
        paths = {"dialogs": self.dialogs}
        for name in ("annotations", "human_ratings", "creation_lexicon", "prompt_dir"):
            if getattr(self, name) is not None:
                paths[name] = getattr(self, name)
        for spec in (*self.adapters, self.judge):
            if spec.responses is not None:
                paths[f"{spec.model_id}.responses"] = spec.responses
        for name, p in paths.items():
            if not Path(p).exists():
                raise ConfigError(f"{name}: path does not exist: {p}")
        if not 0 <= self.csi_match_threshold <= 100:
            raise ConfigError("csi_match_threshold must be within 0..100")
        if not 0 < self.significance < 1:
            raise ConfigError("significance must be within (0, 1)")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.csi_mode not in ("occurrence", "type"):
            raise ConfigError("csi_mode must be 'occurrence' or 'type'")
        if self.p_value_method not in ("normal", "exact"):
            raise ConfigError("p_value_method must be 'normal' or 'exact'")
        ids = [a.model_id for a in self.adapters]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"adapter model ids must be unique: {ids}")
        for spec in (*self.adapters, self.judge):
            if spec.kind not in BACKEND_KINDS:
                raise ConfigError(f"{spec.model_id}: unknown backend kind {spec.kind!r}")
            if spec.kind == "http" and not spec.endpoint:
                raise ConfigError(f"{spec.model_id}: http backends need an endpoint")
            if spec.kind in ("replay", "canned") and spec.responses is None:
                raise ConfigError(f"{spec.model_id}: {spec.kind} backends need a responses file")
        return self

    def snapshot(self) -> dict[str, Any]:
        def conv(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v

        return conv(asdict(self))


def _backend(raw: Mapping[str, Any], base: Path) -> BackendSpec:
    raw = dict(raw)
    known = {f.name for f in fields(BackendSpec)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown backend fields {sorted(unknown)}")
    if "model_id" not in raw:
        raise ConfigError("every backend needs a model_id")
    if raw.get("responses") is not None:
        raw["responses"] = _path(raw["responses"], base)
    return BackendSpec(**raw)


def _path(value, base: Path) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


_PATH_FIELDS = ("dialogs", "annotations", "human_ratings", "cache_dir", "out_dir", "creation_lexicon", "prompt_dir")


def config_from_mapping(data: Mapping[str, Any], base: Path = Path(".")) -> RunConfig:
    data = dict(data)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    for name in ("dialogs", "adapters", "judge"):
        if name not in data:
            raise ConfigError(f"config needs {name!r}")
    for name in _PATH_FIELDS:
        if data.get(name) is not None:
            data[name] = _path(data[name], base)
    data["adapters"] = tuple(_backend(a, base) for a in data["adapters"] or ())
    data["judge"] = _backend(data["judge"], base)
    if "decoding" in data:
        data["decoding"] = Decoding(**data["decoding"])
    return RunConfig(**data)


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    config = config_from_mapping(data, path.parent)
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "judge_model":
            changes["judge"] = replace(changes.get("judge", config.judge), model_id=value)
        elif key in ("cache_dir", "out_dir"):
            changes[key] = Path(value)
        else:
            changes[key] = value
    return replace(config, **changes)


def build_backend(spec: BackendSpec, config: RunConfig, dialogs_by_id: Mapping | None = None):
    decoding = spec.decoding(config.decoding)
    if spec.kind == "http":
        return HttpBackend(spec.endpoint, spec.model_id, decoding, spec.wire, spec.api_key_env)
    if spec.kind == "echo":
        backend = echo_adapter(spec.model_id)
    elif spec.kind == "replay":
        by_id = load_replay_file(spec.responses)
        dialogs_by_id = dialogs_by_id or {}
        outputs = {dialogs_by_id[d].text: c for d, c in by_id.items() if d in dialogs_by_id}
        backend = replay_adapter(spec.model_id, outputs)
    elif spec.kind == "canned":
        backend = MockBackend(spec.model_id, load_replay_file(spec.responses), spec.default_response)
    else:
        backend = HeuristicJudge(model_id=spec.model_id)
    backend.decoding = decoding
    return backend
