"""Run configuration: one JSON file drives every pipeline command.

Secrets (API keys) never live in the config; the rewriter section names the
environment variable to read instead. ``--seed`` and ``--mode`` CLI flags
override the file values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..adapters import TrainConfig
from ..model import ModelConfig

MODES = ("base", "vanilla_rag", "p_rag", "combine")
CONTEXT_FORMATS = ("plain", "structured")


class ConfigError(ValueError):
    """The run configuration is invalid or incomplete."""


@dataclass(frozen=True)
class RetrievalSettings:
    k_cases: int = 1
    k_statutes_from: int = 5
    context_top_k: int = 3
    bm25_k1: float = 1.5
    bm25_b: float = 0.75


@dataclass(frozen=True)
class RewriterSettings:
    kind: str = "builtin"  # "builtin" | "http"
    base_url: str = ""
    model: str = ""
    temperature: float = 0.7
    api_key_env: str = "REWRITER_API_KEY"
    requests_per_second: float = 2.0


@dataclass(frozen=True)
class RunPaths:
    offline_store: str = "corpora/offline.jsonl"
    online_store: str = "corpora/online.jsonl"
    test_store: str = "corpora/test.jsonl"
    base_checkpoint: str = "artifacts/base.plcm"
    adapter_dir: str = "artifacts/adapters"
    report_dir: str = "reports"
    index_snapshot: str = ""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "base"
    master_seed: int = 0
    context_format: str = "plain"
    paths: RunPaths = field(default_factory=RunPaths)
    model: ModelConfig = field(default_factory=ModelConfig)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    training: TrainConfig = field(default_factory=TrainConfig)
    rewriter: RewriterSettings = field(default_factory=RewriterSettings)
    pretrain_steps: int = 300
    pretrain_lr: float = 1e-3
    max_new_tokens: int = 96
    sampling_temperature: float = 0.7
    workers: int = 1
    use_offline_delta: bool = True
    use_online_delta: bool = True

    def validate(self, require_stores: bool = False) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.context_format not in CONTEXT_FORMATS:
            raise ConfigError(f"context_format must be one of {CONTEXT_FORMATS}")
        if self.rewriter.kind not in ("builtin", "http"):
            raise ConfigError(f"rewriter.kind must be 'builtin' or 'http', got {self.rewriter.kind!r}")
        if self.rewriter.kind == "http" and not self.rewriter.base_url:
            raise ConfigError("rewriter.kind='http' requires rewriter.base_url")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if require_stores:
            for name in ("offline_store", "online_store", "test_store"):
                p = Path(getattr(self.paths, name))
                if not p.exists():
                    raise ConfigError(f"paths.{name} does not exist: {p}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["training"]["targets"] = list(self.training.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kwargs: dict = {}
        if "paths" in d:
            kwargs["paths"] = RunPaths(**d.pop("paths"))
        if "model" in d:
            kwargs["model"] = ModelConfig(**d.pop("model"))
        if "retrieval" in d:
            kwargs["retrieval"] = RetrievalSettings(**d.pop("retrieval"))
        if "training" in d:
            t = dict(d.pop("training"))
            if "targets" in t:
                t["targets"] = tuple(t["targets"])
            kwargs["training"] = TrainConfig(**t)
        if "rewriter" in d:
            kwargs["rewriter"] = RewriterSettings(**d.pop("rewriter"))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs, **d)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        try:
            return cls.from_dict(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    def to_json_file(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def with_overrides(self, mode: str | None = None, seed: int | None = None) -> "RunConfig":
        out = self
        if mode is not None:
            out = replace(out, mode=mode)
        if seed is not None:
            out = replace(out, master_seed=seed)
        return out
