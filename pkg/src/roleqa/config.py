"""Run configuration: one JSON document covering retrieval, pipeline, training
and backend bindings. Defaults: 10 expansions at temperature 0.7, 100 retrieved,
w=20, l=10."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from roleqa.backends import ROLE_KINDS, Backend, CachedBackend, HttpBackend, MockBackend, OracleBackend, ScriptedBackend
from roleqa.core import RoleQAError
from roleqa.pipeline import PipelineConfig
from roleqa.promptopt import TrainConfig
from roleqa.rerank import WindowConfig
from roleqa.retrieval import RetrievalConfig
from roleqa.roles import DEFAULT_TEMPERATURES, RoleBindings

BACKEND_TYPES = ("mock", "scripted", "http", "oracle")
_SECRET_KEYS = {"api_key", "token", "authorization", "bearer"}


class ConfigError(RoleQAError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    type: str = "mock"
    temperature: float | None = None
    path: str | None = None
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    retries: int = 2
    answers: Mapping[str, str] | None = None
    default_answer: str = "unknown"

    def __post_init__(self):
        if self.type not in BACKEND_TYPES:
            raise ConfigError(f"unknown backend type {self.type!r}")
        if self.type == "scripted" and not self.path:
            raise ConfigError("scripted backend needs a 'path'")
        if self.type == "http" and not (self.endpoint and self.model):
            raise ConfigError("http backend needs 'endpoint' and 'model'")
        if self.temperature is not None and self.temperature < 0:
            raise ConfigError("temperature must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backends: Mapping[str, BackendSpec] = field(default_factory=lambda: {k: BackendSpec() for k in ROLE_KINDS})
    cache_dir: str | None = None
    output_dir: str | None = None
    seed: int = 0
    workers: int = 1
    doc_tokens: int = 120

    def __post_init__(self):
        missing = [k for k in ROLE_KINDS if k not in self.backends]
        if missing:
            raise ConfigError(f"roles without a backend: {missing}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _build(cls, data: Mapping | None, where: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_secrets(obj, where="config"):
    if isinstance(obj, Mapping):
        for k, v in obj.items():
            if str(k).lower() in _SECRET_KEYS:
                raise ConfigError(f"{where}: credentials must come from the environment, not key {k!r}")
            _check_secrets(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_secrets(v, f"{where}[{i}]")


def config_from_dict(data: Mapping, *, seed: int | None = None, workers: int | None = None) -> RunConfig:
    data = dict(data)
    _check_secrets(data)
    seed = int(data.pop("seed", 0)) if seed is None else seed
    pipe = dict(data.pop("pipeline", {}) or {})
    window = _build(WindowConfig, pipe.pop("window", None), "pipeline.window")
    pipe.setdefault("random_seed", seed)
    pipeline = _build(PipelineConfig, {**pipe, "window": window}, "pipeline")
    retrieval = _build(RetrievalConfig, data.pop("retrieval", None), "retrieval")
    train = _build(TrainConfig, data.pop("train", None), "train")

    raw_backends = dict(data.pop("backends", {}) or {})
    default = raw_backends.pop("default", {"type": "mock"})
    bad = set(raw_backends) - set(ROLE_KINDS)
    if bad:
        raise ConfigError(f"backends: unknown role kinds {sorted(bad)}")
    backends = {k: _build(BackendSpec, raw_backends.get(k, default), f"backends.{k}") for k in ROLE_KINDS}

    top = {k: data.pop(k) for k in ("cache_dir", "output_dir", "workers", "doc_tokens") if k in data}
    if data:
        raise ConfigError(f"unknown top-level keys {sorted(data)}")
    if workers is not None:
        top["workers"] = workers
    return _build(RunConfig, {"retrieval": retrieval, "pipeline": pipeline, "train": train,
                              "backends": backends, "seed": seed, **top}, "config")


def load_config(path=None, **overrides) -> RunConfig:
    if path is None:
        return config_from_dict({}, **overrides)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data, **overrides)


def make_backend(spec: BackendSpec, gold: Mapping[str, list[str]] | None = None) -> Backend:
    if spec.type == "mock":
        return MockBackend(spec.answers, spec.default_answer)
    if spec.type == "scripted":
        return ScriptedBackend.from_file(spec.path)
    if spec.type == "http":
        return HttpBackend(spec.endpoint, spec.model, spec.api_key_env, retries=spec.retries)
    if gold is None:
        raise ConfigError("oracle backend needs a dataset with gold answers")
    return OracleBackend(gold)


def make_roles(cfg: RunConfig, gold: Mapping[str, list[str]] | None = None) -> RoleBindings:
    built: dict[tuple, Backend] = {}
    bound = {}
    temps = dict(DEFAULT_TEMPERATURES)
    for kind, spec in cfg.backends.items():
        key = _spec_key(spec)
        if key not in built:
            backend = make_backend(spec, gold)
            if cfg.cache_dir:
                backend = CachedBackend(backend, cfg.cache_dir)
            built[key] = backend
        bound[kind] = built[key]
        if spec.temperature is not None:
            temps[kind] = spec.temperature
    return RoleBindings(bound, temps, seed=cfg.seed, max_window=max(cfg.pipeline.window.w, 1),
                        doc_tokens=cfg.doc_tokens)


def _spec_key(spec: BackendSpec):
    # answers may be a dict; temperature is per role, not per backend instance
    return (spec.type, spec.path, spec.endpoint, spec.model, spec.api_key_env, spec.retries,
            json.dumps(dict(spec.answers or {}), sort_keys=True), spec.default_answer)
