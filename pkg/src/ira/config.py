"""Pipeline configuration: one declarative file plus flag overrides.

Precedence is flags > file > defaults. The file is YAML or JSON with the
sections ``dataset``, ``endpoints``, ``pipeline`` and the top-level
``output_dir`` / ``cache_dir`` / ``stub_fixtures`` keys; see README for the
schema.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .answering import VARIANTS
from .errors import ConfigInvalid
from .filtering import MODES
from .gateway import ROLES, ServiceEndpointConfig, stub_endpoints

DEFAULT_SHOTS = {"pica": 16, "promptcap": 16, "prophet": 20}


@dataclass
class PipelineConfig:
    dataset_dir: str
    output_dir: str
    dataset_format: str = "okvqa"
    image_root: str | None = None
    train_split: str = "train"
    eval_split: str = "val"
    endpoints: dict[str, ServiceEndpointConfig] = field(default_factory=dict)
    k: int = 3
    shots: int | None = None
    ensemble_queries: int = 1
    variant: str = "pica"
    filter_mode: str = "ensemble"
    refine_examples: bool = False
    overlap_windows: bool = False
    seed: int = 0
    workers: int = 1
    normalization: str = "default"
    max_answer_tokens: int = 10
    max_generation_tokens: int = 256
    max_summary_tokens: int = 64
    cache_dir: str | None = None
    stub_fixtures: str | None = None
    filter_dir: str | None = None  # checkpoint location; default <output_dir>/filters

    def resolved_shots(self) -> int:
        if self.shots is not None:
            return self.shots
        return DEFAULT_SHOTS[self.variant]

    def fingerprint(self) -> dict:
        """Canonical dict of every content-affecting setting (not paths like output/cache)."""
        data = dataclasses.asdict(self)
        data.pop("output_dir")
        data.pop("cache_dir")
        data["shots"] = self.resolved_shots()
        data["endpoints"] = {
            role: dataclasses.asdict(cfg) for role, cfg in sorted(self.endpoints.items())
        }
        return data

    def validate(self) -> None:
        if not Path(self.dataset_dir).is_dir():
            raise ConfigInvalid("dataset.dir", f"not a directory: {self.dataset_dir}")
        if self.dataset_format not in ("okvqa", "aokvqa"):
            raise ConfigInvalid("dataset.format", f"unknown format {self.dataset_format!r}")
        if self.image_root is not None and not Path(self.image_root).is_dir():
            raise ConfigInvalid("dataset.image_root", f"not a directory: {self.image_root}")
        if self.k < 1:
            raise ConfigInvalid("pipeline.k", "must be >= 1")
        if self.shots is not None and self.shots < 0:
            raise ConfigInvalid("pipeline.shots", "must be >= 0")
        if not 1 <= self.ensemble_queries <= 5:
            raise ConfigInvalid("pipeline.ensemble_queries", "must be in 1..5")
        if self.variant not in VARIANTS:
            raise ConfigInvalid("pipeline.variant", f"must be one of {VARIANTS}")
        if self.filter_mode not in MODES:
            raise ConfigInvalid("pipeline.filter_mode", f"must be one of {MODES}")
        if self.workers < 1:
            raise ConfigInvalid("pipeline.workers", "must be >= 1")
        if self.normalization not in ("default", "official"):
            raise ConfigInvalid("pipeline.normalization", "must be 'default' or 'official'")
        missing = [role for role in ROLES if role not in self.endpoints]
        if missing:
            raise ConfigInvalid("endpoints", f"missing role(s): {', '.join(missing)}")
        text_dim = self.endpoints["embed_text"].embed_dim
        image_dim = self.endpoints["embed_image"].embed_dim
        if text_dim is not None and image_dim is not None and text_dim != image_dim:
            raise ConfigInvalid("endpoints.embed_image", "embed dims of text and image differ")
        if self.stub_fixtures is not None and not Path(self.stub_fixtures).is_file():
            raise ConfigInvalid("stub_fixtures", f"not a file: {self.stub_fixtures}")


def _parse_endpoint(role: str, raw: dict) -> ServiceEndpointConfig:
    try:
        return ServiceEndpointConfig(role=role, **raw)
    except (TypeError, ValueError) as e:
        raise ConfigInvalid(f"endpoints.{role}", str(e)) from e


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse a config file and apply CLI overrides on top."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid("config", f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigInvalid("config", f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "top level must be a mapping")

    dataset = raw.get("dataset", {})
    pipeline = raw.get("pipeline", {})
    known_pipeline = {
        "k", "shots", "ensemble_queries", "variant", "filter_mode", "refine_examples",
        "overlap_windows", "seed", "workers", "normalization", "max_answer_tokens",
        "max_generation_tokens", "max_summary_tokens",
    }
    unknown = set(pipeline) - known_pipeline
    if unknown:
        raise ConfigInvalid("pipeline", f"unknown key(s): {', '.join(sorted(unknown))}")
    endpoints = {
        role: _parse_endpoint(role, entry) for role, entry in raw.get("endpoints", {}).items()
    }
    config = PipelineConfig(
        dataset_dir=dataset.get("dir", raw.get("dataset_dir", "")),
        output_dir=raw.get("output_dir", ""),
        dataset_format=dataset.get("format", "okvqa"),
        image_root=dataset.get("image_root"),
        train_split=dataset.get("train_split", "train"),
        eval_split=dataset.get("eval_split", "val"),
        endpoints=endpoints,
        cache_dir=raw.get("cache_dir") or os.environ.get("IRA_CACHE_DIR"),
        stub_fixtures=raw.get("stub_fixtures"),
        filter_dir=raw.get("filter_dir"),
        **{key: pipeline[key] for key in known_pipeline if key in pipeline},
    )

    overrides = overrides or {}
    for key in ("k", "shots", "ensemble_queries", "variant", "filter_mode", "seed",
                "output_dir", "workers"):
        if overrides.get(key) is not None:
            setattr(config, key, overrides[key])
    if overrides.get("stub"):
        config.endpoints = stub_endpoints(
            seed=config.seed,
            embed_dim=config.endpoints.get(
                "embed_text", ServiceEndpointConfig("embed_text", "stub:0", "stub", embed_dim=64)
            ).embed_dim
            or 64,
        )
    if not config.output_dir:
        raise ConfigInvalid("output_dir", "must be set in the config file or via --output-dir")
    config.validate()
    return config
