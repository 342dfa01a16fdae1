"""Prompt bundle type shared by the prompt-building operations."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any


@dataclass
class PromptBundle:
    """A fully rendered prompt plus structured provenance of every filled slot.

    ``slots`` holds enough structure to re-render ``text`` exactly; builders
    guarantee render(slots) == text.
    """

    text: str
    slots: dict[str, Any] = field(default_factory=dict)
    variant: str | None = None
    shots: int | None = None

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()
