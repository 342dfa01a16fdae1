"""Deterministic offline stand-ins for the four external model roles.

Every response is a pure function of (seed, request contents) via sha256, so
repeated pipeline runs are bitwise reproducible. A fixture file can pin exact
responses for specific inputs; everything else falls back to hash-driven
vocabulary picks. The completion stub is prompt-shape aware so whole pipeline
runs produce parseable sub-question lists, summaries and short answers.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_SEP = b"\x1f"

NOUNS = [
    "sandwich", "umbrella", "skier", "bicycle", "kite", "giraffe", "laptop",
    "pizza", "train", "surfboard", "clock", "vase", "bench", "motorcycle",
]
ADJECTIVES = [
    "red", "wooden", "small", "shiny", "old", "striped", "tall", "wet",
    "frosted", "round", "yellow", "busy",
]
VERBS = [
    "standing", "resting", "moving", "floating", "waiting", "leaning",
    "turning", "parked",
]
PLACES = [
    "park", "street", "kitchen", "beach", "field", "station", "market", "hill",
]
ASPECTS = [
    "color", "shape", "size", "material", "purpose", "brand", "age", "origin",
]
ANSWERS = [
    "ham", "ski", "snow", "water", "wood", "red", "two", "dog", "kite",
    "pizza", "winter", "glass", "train", "yes", "no", "umbrella", "surfing",
    "tennis", "coffee", "metal",
]


def digest_int(*parts) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(_SEP)
    return int.from_bytes(h.digest()[:8], "big")


def rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(digest_int(*parts))


def _pick(options: list[str], *parts) -> str:
    return options[digest_int(*parts) % len(options)]


@dataclass
class StubFixtures:
    """Canned responses keyed by request contents; first match wins."""

    complete: list[dict] = field(default_factory=list)
    vqa: list[dict] = field(default_factory=list)
    caption: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "StubFixtures":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            complete=raw.get("complete", []),
            vqa=raw.get("vqa", []),
            caption=raw.get("caption", []),
        )

    def match_complete(self, prompt: str) -> str | None:
        for entry in self.complete:
            contains = entry.get("prompt_contains")
            suffix = entry.get("prompt_suffix")
            if contains is not None and contains in prompt:
                return entry["text"]
            if suffix is not None and prompt.endswith(suffix):
                return entry["text"]
        return None

    @staticmethod
    def _image_matches(entry_image: str | None, image_ref: str) -> bool:
        if entry_image is None:
            return True
        return entry_image == image_ref or entry_image == Path(image_ref).name

    def match_vqa(self, image_ref: str, question: str) -> str | None:
        for entry in self.vqa:
            if self._image_matches(entry.get("image"), image_ref) and entry.get("question") == question:
                return entry["answer"]
        return None

    def match_caption(self, image_ref: str, question: str | None) -> str | None:
        for entry in self.caption:
            if not self._image_matches(entry.get("image"), image_ref):
                continue
            if "question" in entry and entry["question"] != question:
                continue
            return entry["caption"]
        return None


_K_PATTERN = re.compile(r"into (\d+) questions")
_SUMMARY_TAIL = re.compile(r"Q: (?P<q>[^\n]*)\nA: (?P<a>[^\n]*)\nSummary:$")


class StubBackend:
    """Seeded fake backend for one endpoint role."""

    def __init__(self, seed: int, fixtures: StubFixtures | None = None, embed_dim: int = 64):
        self.seed = seed
        self.fixtures = fixtures or StubFixtures()
        self.embed_dim = embed_dim

    # -- completion ------------------------------------------------------

    def complete(self, prompt: str, max_tokens: int, stop_sequences: tuple[str, ...]) -> str:
        fixed = self.fixtures.match_complete(prompt)
        text = fixed if fixed is not None else self._synthesize_completion(prompt)
        for stop in stop_sequences:
            cut = text.find(stop)
            if cut >= 0:
                text = text[:cut]
        return text

    def _synthesize_completion(self, prompt: str) -> str:
        if prompt.endswith("Sub questions:"):
            match = _K_PATTERN.search(prompt)
            k = int(match.group(1)) if match else 3
            items = []
            for i in range(1, k + 1):
                aspect = _pick(ASPECTS, self.seed, "subq-aspect", prompt, i)
                noun = _pick(NOUNS, self.seed, "subq-noun", prompt, i)
                items.append(f"{i}. What {aspect} is the {noun}?")
            return " ".join(items)
        if prompt.endswith("Summary:"):
            tail = _SUMMARY_TAIL.search(prompt)
            if tail:
                q = tail.group("q").strip()
                a = tail.group("a").strip().rstrip(".")
                return f'Regarding "{q}", the answer is {a}.'
            return "There is nothing notable to report."
        if prompt.endswith("Answer:"):
            return _pick(ANSWERS, self.seed, "answer", prompt)
        words = [_pick(NOUNS + ADJECTIVES, self.seed, "free", prompt, i) for i in range(4)]
        return " ".join(words)

    # -- vision roles ------------------------------------------------------

    def vqa(self, image_ref: str, question: str) -> str:
        fixed = self.fixtures.match_vqa(image_ref, question)
        if fixed is not None:
            return fixed
        return _pick(ANSWERS, self.seed, "vqa", image_ref, question)

    def caption(self, image_ref: str, question: str | None = None) -> str:
        fixed = self.fixtures.match_caption(image_ref, question)
        if fixed is not None:
            return fixed
        adj = _pick(ADJECTIVES, self.seed, "cap-adj", image_ref, question)
        noun = _pick(NOUNS, self.seed, "cap-noun", image_ref, question)
        verb = _pick(VERBS, self.seed, "cap-verb", image_ref, question)
        place = _pick(PLACES, self.seed, "cap-place", image_ref, question)
        return f"a {adj} {noun} {verb} near the {place}."

    def embed(self, kind: str, payload: str) -> list[float]:
        rng = rng_from(self.seed, "embed", kind, payload)
        vec = rng.standard_normal(self.embed_dim)
        vec /= np.linalg.norm(vec)
        return vec.tolist()
