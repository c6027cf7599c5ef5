"""Declarative pipeline configuration.

Precedence is CLI flag > environment variable > config file > default.
Only credentials and endpoints are read from the environment.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

# path-valued fields are resolved relative to the config file
_PATH_FIELDS = ("fixtures", "prompts", "cache_dir")

ENV_VARS = {
    "api_base_url": "MMVERIFY_BASE_URL",
    "image_endpoint": "MMVERIFY_IMAGE_SEARCH_URL",
}
SECRET_ENV = {
    "api_key": "MMVERIFY_API_KEY",
    "image_api_key": "MMVERIFY_IMAGE_SEARCH_KEY",
}


@dataclass(frozen=True)
class PipelineConfig:
    # model gateway
    mode: str = "replay"
    record: bool = False
    fixtures: Optional[str] = None
    prompts: Optional[str] = None
    model_hint: str = "gpt-4-vision-preview"
    max_tokens: int = 1024
    temperature: float = 0.0
    image_mode: str = "attach"
    max_model_concurrency: int = 4
    max_attempts: int = 5
    api_base_url: Optional[str] = None
    # retrieval
    search_provider: str = "stub_fixture"
    top_k: int = 5
    per_query_timeout_ms: int = 10_000
    region: Optional[str] = None
    image_provider: str = "stub_fixture"
    image_endpoint: Optional[str] = None
    image_fail_open: bool = True
    # distillation
    fetch_mode: str = "fixture"
    fetch_timeout_ms: int = 15_000
    body_budget: int = 8000
    user_agent: str = "Mozilla/5.0 (compatible; mmverify/0.1)"
    batch_size: int = 8
    segment_max_chars: int = 600
    # ablations
    no_initial_stage_infer: bool = False
    no_visual_retrieval: bool = False
    # runner and ingestion
    post_concurrency: int = 4
    min_text_len: int = 20
    require_image: bool = False
    cache_dir: Optional[str] = None
    cache_max_age_s: float = 7 * 24 * 3600
    offline: bool = False

    def __post_init__(self):
        checks = [
            (self.mode in ("live", "replay", "scripted"), f"mode must be live, replay or scripted, not {self.mode!r}"),
            (self.search_provider in ("duckduckgo_like", "stub_fixture"), "unknown search_provider"),
            (self.image_provider in ("http", "stub_fixture"), "unknown image_provider"),
            (self.fetch_mode in ("live", "fixture"), "unknown fetch_mode"),
            (self.image_mode in ("attach", "summarize"), "image_mode must be attach or summarize"),
            (self.top_k >= 1, "top_k must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (0.0 <= self.temperature <= 2.0, "temperature must lie in [0, 2]"),
            (self.min_text_len >= 0, "min_text_len must be >= 0"),
            (self.post_concurrency >= 1, "post_concurrency must be >= 1"),
            (self.per_query_timeout_ms > 0, "per_query_timeout_ms must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.mode == "replay" and not self.fixtures:
            raise ConfigError("replay mode needs a fixtures directory")
        if self.record and not self.fixtures:
            raise ConfigError("record mode needs a fixtures directory")
        if self.fetch_mode == "fixture" and not self.fixtures:
            raise ConfigError("fetch_mode fixture needs a fixtures directory")

    def replace(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict:
        """Settings recorded in run reports (no secrets, nothing machine-specific)."""
        d = dataclasses.asdict(self)
        for key in _PATH_FIELDS:
            if d[key] is not None:
                d[key] = Path(d[key]).name
        d.pop("cache_dir")
        d.pop("api_base_url")
        return d


def load_config(path: Optional[str | os.PathLike] = None, **overrides) -> PipelineConfig:
    """Read a YAML or JSON config file, then apply env vars and ``overrides``."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            text = p.read_text(encoding="utf-8")
            data = (json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)) or {}
        except (OSError, ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {p} must be a mapping")
        for key in _PATH_FIELDS:
            if data.get(key):
                data[key] = str((p.parent / data[key]).resolve())
    unknown = set(data) - {f.name for f in fields(PipelineConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, env in ENV_VARS.items():
        if os.environ.get(env):
            data[key] = os.environ[env]
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
