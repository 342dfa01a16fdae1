"""Fixture-mode backend: canned responses plus a deterministic synthesizer.

Responses are pure functions of the request contents (sha256-seeded), so
contract tests run without any model weights and replay identically.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from pathlib import Path

_WORDS = [
    "ham", "ski", "snow", "water", "wood", "red", "two", "dog", "kite",
    "pizza", "winter", "glass", "train", "umbrella", "surfing", "coffee",
]
_NOUNS = ["sandwich", "skier", "kite", "table", "hydrant", "train", "dog", "glass"]
_ADJECTIVES = ["red", "small", "wooden", "snowy", "busy", "round", "tall", "shiny"]
_PLACES = ["park", "street", "kitchen", "beach", "field", "station", "hill", "market"]


def _digest(*parts: str) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "big")


def _pick(options: list[str], *parts: str) -> str:
    return options[_digest(*parts) % len(options)]


class FixtureBackend:
    """Serves all four roles from fixtures and hash-derived fallbacks."""

    def __init__(self, fixture_path: str | Path | None, embed_dim: int = 64):
        self.embed_dim = embed_dim
        raw = {}
        if fixture_path is not None:
            raw = json.loads(Path(fixture_path).read_text(encoding="utf-8"))
        self._complete = raw.get("complete", [])
        self._vqa = raw.get("vqa", [])
        self._caption = raw.get("caption", [])
        if "embed_dim" in raw:
            self.embed_dim = int(raw["embed_dim"])

    # -- matching ----------------------------------------------------------

    @staticmethod
    def _image_matches(entry: dict, image_sha: str) -> bool:
        expected = entry.get("image_sha256")
        return expected is None or expected == image_sha

    def complete(self, prompt: str, max_tokens: int, stop: list[str]) -> str:
        text = None
        for entry in self._complete:
            if entry.get("prompt_contains") and entry["prompt_contains"] in prompt:
                text = entry["text"]
                break
            if entry.get("prompt_suffix") and prompt.endswith(entry["prompt_suffix"]):
                text = entry["text"]
                break
        if text is None:
            count = min(max_tokens, 4)
            text = " ".join(_pick(_WORDS, "complete", prompt, str(i)) for i in range(count))
        for sequence in stop:
            cut = text.find(sequence)
            if cut >= 0:
                text = text[:cut]
        return text

    def vqa(self, image_b64: str, question: str) -> str:
        image_sha = hashlib.sha256(image_b64.encode("ascii")).hexdigest()
        for entry in self._vqa:
            if entry.get("question") == question and self._image_matches(entry, image_sha):
                return entry["answer"]
        return _pick(_WORDS, "vqa", image_sha, question)

    def caption(self, image_b64: str, question: str | None) -> str:
        image_sha = hashlib.sha256(image_b64.encode("ascii")).hexdigest()
        for entry in self._caption:
            if "question" in entry and entry["question"] != question:
                continue
            if self._image_matches(entry, image_sha):
                return entry["caption"]
        adjective = _pick(_ADJECTIVES, "cap-adj", image_sha, question or "")
        noun = _pick(_NOUNS, "cap-noun", image_sha, question or "")
        place = _pick(_PLACES, "cap-place", image_sha, question or "")
        return f"a {adjective} {noun} at the {place}."

    def embed(self, kind: str, payload: str) -> list[float]:
        rng = random.Random(_digest("embed", kind, payload))
        values = [rng.gauss(0.0, 1.0) for _ in range(self.embed_dim)]
        norm = math.sqrt(sum(v * v for v in values)) or 1.0
        return [v / norm for v in values]
