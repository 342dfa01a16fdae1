"""Shim configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

ROLES = ("completion", "vqa", "caption", "embed")

DEFAULT_MODELS = {
    "completion": "TinyLlama/TinyLlama-1.1B-Chat-v1.0",
    "vqa": "Salesforce/blip2-opt-2.7b",
    "caption": "Salesforce/blip-image-captioning-base",
    "embed": "openai/clip-vit-base-patch32",
}


@dataclass
class ShimConfig:
    port: int = 8901
    host: str = "127.0.0.1"
    models: dict[str, str] = field(default_factory=dict)
    device: str = "cpu"
    fixture_path: str | None = None
    embed_dim: int = 64
    queue_size: int = 8
    enabled_roles: tuple[str, ...] = ROLES

    def __post_init__(self):
        unknown = set(self.enabled_roles) - set(ROLES)
        if unknown:
            raise ValueError(f"unknown role(s): {', '.join(sorted(unknown))}")
        if self.fixture_path is None:
            missing = [r for r in self.enabled_roles if r not in self.models]
            if missing:
                raise ValueError(
                    "no fixture path set and no model identifier for role(s): "
                    + ", ".join(missing)
                )

    def model_for(self, role: str) -> str:
        return self.models.get(role) or DEFAULT_MODELS[role]
