"""Answer reasoning: few-shot prompt assembly (PICa / PromptCap / Prophet

variants), similarity-based in-context example selection, prediction, and
multi-query ensembling with majority voting.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dataset import VQAInstance, normalize_answer
from .errors import EmptyCompletion, MissingField, PoolTooSmall
from .gateway import CompletionRequest, ModelGateway
from .prompts import PromptBundle

logger = logging.getLogger(__name__)

VARIANTS = ("pica", "promptcap", "prophet")

BASE_INSTRUCTION = (
    "Answer the questions using the provided image information, captions and extra "
    "commonsense knowledge. Answers should be no longer than 3 words:"
)
PROPHET_INSTRUCTION = (
    "Answer the questions using the provided image information, captions, candidate answers "
    "and extra commonsense knowledge. Each candidate answer is associated with a confidence "
    "score within a bracket. The true answer may not be included in the candidate answers. "
    "Answers should be no longer than 3 words:"
)


@dataclass
class PoolEntry:
    """A solved training instance available as an in-context example."""

    instance: VQAInstance
    question_embed: np.ndarray
    caption_embed: np.ndarray | None
    info: list[str]
    gold: str


@dataclass
class ExamplePool:
    entries: list[PoolEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class EnsembleConfig:
    queries: int = 1
    shots: int = 16
    disjoint: bool = True

    def __post_init__(self):
        if not 1 <= self.queries <= 5:
            raise ValueError(f"ensemble queries must be in 1..5, got {self.queries}")
        if self.shots < 0:
            raise ValueError("shots must be >= 0")


@dataclass
class EnsemblePrediction:
    answer: str
    per_query_answers: list[str | None]
    prompt_hashes: list[str]


def representative_gold(gold_answers: list[str]) -> str:
    """Most frequent answer (after normalization); earliest occurrence wins ties."""
    if not gold_answers:
        raise ValueError("cannot pick a representative from an empty answer list")
    counts = Counter(normalize_answer(a) for a in gold_answers)
    best = max(counts.values())
    for raw in gold_answers:
        if counts[normalize_answer(raw)] == best:
            return raw
    raise AssertionError("unreachable")


def selection_embedding(question_embed, caption_embed=None) -> np.ndarray:
    """Mean of question and caption embeddings when both exist."""
    q = np.asarray(question_embed, dtype=np.float64)
    if caption_embed is None:
        return q
    return (q + np.asarray(caption_embed, dtype=np.float64)) / 2.0


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


def select_examples(
    pool: ExamplePool,
    query_embedding,
    n: int,
    offset: int = 0,
    stride: int | None = None,
) -> list[PoolEntry]:
    """Rank the pool by cosine similarity and return the window at ``offset``.

    The default stride of ``n`` makes consecutive offsets disjoint windows
    [offset*n, offset*n + n); ties in similarity break by ascending
    question_id so the ranking is independent of pool order.
    """
    if n == 0:
        return []
    if stride is None:
        stride = n
    start = offset * stride
    if start + n > len(pool.entries):
        raise PoolTooSmall(
            f"need {start + n} pool entries for offset {offset}, have {len(pool.entries)}"
        )
    query = np.asarray(query_embedding, dtype=np.float64)
    ranked = sorted(
        pool.entries,
        key=lambda e: (
            -_cosine(selection_embedding(e.question_embed, e.caption_embed), query),
            e.instance.question_id,
        ),
    )
    return ranked[start : start + n]


# -- prompt rendering ------------------------------------------------------


def _info_line(items: list[str]) -> str:
    if not items:
        return "Image information:\n"
    return "Image information: " + "; ".join(items) + "\n"


def _caption_line(caption: str, tags: list[str] | None) -> str:
    if tags:
        return f"Caption: {caption} " + ", ".join(tags) + "\n"
    return f"Caption: {caption}\n"


def _candidates_line(candidates: list[tuple[str, float]]) -> str:
    rendered = ", ".join(f"{answer} ({conf:.2f})" for answer, conf in candidates)
    return f"Candidates: {rendered}\n"


def render_answer_prompt(slots: dict) -> str:
    variant = slots["variant"]
    parts = [slots["instruction"], "\n"]
    for example in slots["examples"]:
        parts.append(_info_line(example["info"]))
        parts.append(_caption_line(example["caption"], example.get("tags")))
        parts.append(f"Question: {example['question']}\n")
        if variant == "prophet":
            parts.append(_candidates_line(example["candidates"]))
        parts.append(f"Answer: {example['answer']}\n")
    query = slots["query"]
    parts.append(_info_line(query["info"]))
    parts.append(_caption_line(query["caption"], query.get("tags")))
    parts.append(f"Question: {query['question']}\n")
    if variant == "prophet":
        parts.append(_candidates_line(query["candidates"]))
    parts.append("Answer:")
    return "".join(parts)


def _require(variant: str, value, field_name: str):
    if value is None:
        raise MissingField(variant, field_name)
    return value


def build_answer_prompt(
    query_instance: VQAInstance,
    query_caption: str,
    examples: list[PoolEntry],
    refined_info: list[str],
    variant: str,
) -> PromptBundle:
    """Render the few-shot reasoning prompt for one query instance.

    ``refined_info`` fills the query's "Image information" line; each
    example's line comes from its pool entry. PICa appends the tag list to
    captions, Prophet appends a candidates line after each question.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    instruction = PROPHET_INSTRUCTION if variant == "prophet" else BASE_INSTRUCTION
    example_slots = []
    for entry in examples:
        inst = entry.instance
        slot = {
            "info": list(entry.info),
            "caption": _require(variant, inst.caption, "caption"),
            "question": inst.question,
            "answer": entry.gold,
        }
        if variant == "pica":
            slot["tags"] = list(_require(variant, inst.tags, "tags"))
        if variant == "prophet":
            slot["candidates"] = list(_require(variant, inst.candidates, "candidates"))
        example_slots.append(slot)
    query_slot = {
        "info": list(refined_info),
        "caption": query_caption,
        "question": query_instance.question,
    }
    if variant == "pica":
        query_slot["tags"] = list(_require(variant, query_instance.tags, "tags"))
    if variant == "prophet":
        query_slot["candidates"] = list(_require(variant, query_instance.candidates, "candidates"))
    slots = {
        "instruction": instruction,
        "variant": variant,
        "examples": example_slots,
        "query": query_slot,
    }
    return PromptBundle(
        text=render_answer_prompt(slots),
        slots=slots,
        variant=variant,
        shots=len(examples),
    )


# -- prediction --------------------------------------------------------------


def predict_answer(gateway: ModelGateway, bundle: PromptBundle, max_tokens: int = 10) -> str:
    """One completion with newline stop; strips whitespace and an echoed "Answer:"."""
    completion = gateway.complete(
        CompletionRequest(prompt=bundle.text, max_tokens=max_tokens, stop_sequences=("\n",))
    )
    text = completion.split("\n", 1)[0].strip()
    if text.startswith("Answer:"):
        text = text[len("Answer:") :].strip()
    if not text:
        raise EmptyCompletion("completion produced no answer text")
    return text


def majority_vote(per_query_answers: list[str | None]) -> str:
    """Majority over normalized answers; ties go to the lowest offset's answer."""
    counts: Counter = Counter()
    for answer in per_query_answers:
        if answer is not None:
            counts[normalize_answer(answer)] += 1
    if not counts:
        raise EmptyCompletion("no successful predictions to vote over")
    best = max(counts.values())
    winners = {form for form, count in counts.items() if count == best}
    for answer in per_query_answers:
        if answer is not None and normalize_answer(answer) in winners:
            return answer
    raise AssertionError("unreachable")


def ensemble_predict(
    gateway: ModelGateway,
    pool: ExamplePool,
    query_instance: VQAInstance,
    query_caption: str,
    query_embedding,
    refined_info: list[str],
    cfg: EnsembleConfig,
    variant: str,
    max_tokens: int = 10,
) -> EnsemblePrediction:
    """Issue ``cfg.queries`` prompts over example windows 0..T-1 and vote.

    Failed queries are tolerated as long as at least one succeeds; with
    T=1 the result is exactly ``predict_answer`` on the offset-0 window.
    """
    stride = cfg.shots if cfg.disjoint else 1
    per_query: list[str | None] = []
    prompt_hashes: list[str] = []
    last_error: Exception | None = None
    for offset in range(cfg.queries):
        examples = select_examples(pool, query_embedding, cfg.shots, offset=offset, stride=stride)
        bundle = build_answer_prompt(query_instance, query_caption, examples, refined_info, variant)
        prompt_hashes.append(bundle.sha256())
        try:
            per_query.append(predict_answer(gateway, bundle, max_tokens=max_tokens))
        except Exception as e:  # vote among the successes, per contract
            logger.warning(
                "ensemble query %d failed for %s: %s", offset, query_instance.question_id, e
            )
            per_query.append(None)
            last_error = e
    if all(answer is None for answer in per_query):
        assert last_error is not None
        raise last_error
    return EnsemblePrediction(
        answer=majority_vote(per_query),
        per_query_answers=per_query,
        prompt_hashes=prompt_hashes,
    )
