"""Refinement: summarize QA pairs, gather filter supervision, and select

the refined information set. Selection keeps every summary whose
contribution score is at least the score of the original question itself
(the baseline, whose text-side feature degenerates to the question
embedding), ordered by non-increasing score. In ensemble mode the four
single-input filters each score their own input composition and the mean of
the four scores is compared against the mean baseline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from .dataset import VQAInstance
from .errors import EmptyCompletion
from .filtering import FilterModel, FilterSample, filter_score, fuse_features
from .gateway import CompletionRequest, EmbeddingVector, ModelGateway
from .inquiry import QAPair, qa_pair_text
from .prompts import PromptBundle

logger = logging.getLogger(__name__)

SUMMARY_INSTRUCTION = (
    "Please summarise the following question and corresponding answer into a description sentence."
)


@dataclass
class Summary:
    """Narrative rewrite of one QA pair."""

    text: str
    source_index: int
    instance_id: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("summary text must be non-empty")


@dataclass
class SummaryExample:
    question: str
    answer: str
    summary: str


@dataclass
class GeneratedInfo:
    """Everything the inquiry+summarize stages produced for one instance."""

    pairs: list[QAPair]
    summaries: list[Summary]

    def summary_for(self, index: int) -> Summary | None:
        for summary in self.summaries:
            if summary.source_index == index:
                return summary
        return None


@dataclass
class SelectionResult:
    selected: list[Summary]
    scores: list[float]
    baseline: float


def default_summary_examples() -> list[SummaryExample]:
    path = Path(__file__).parent / "assets" / "summarization_examples.json"
    raw = json.loads(path.read_text(encoding="utf-8"))
    return [SummaryExample(**entry) for entry in raw["examples"]]


def render_summary_prompt(slots: dict) -> str:
    parts = [slots["instruction"], "\n"]
    for example in slots["examples"]:
        parts.append(
            f"Q: {example['question']}\nA: {example['answer']}\nSummary: {example['summary']}\n"
        )
    query = slots["query"]
    parts.append(f"Q: {query['question']}\nA: {query['answer']}\nSummary:")
    return "".join(parts)


def build_summary_prompt(pair: QAPair, examples: list[SummaryExample]) -> PromptBundle:
    slots = {
        "instruction": SUMMARY_INSTRUCTION,
        "examples": [
            {"question": ex.question, "answer": ex.answer, "summary": ex.summary}
            for ex in examples
        ],
        "query": {"question": pair.sub_question, "answer": pair.answer},
    }
    return PromptBundle(text=render_summary_prompt(slots), slots=slots, shots=len(examples))


def summarize_pairs(
    gateway: ModelGateway,
    instance_id: str,
    pairs: list[QAPair],
    examples: list[SummaryExample] | None = None,
    max_tokens: int = 64,
) -> list[Summary]:
    """One narrative sentence per QA pair, via the completion role."""
    if examples is None:
        examples = default_summary_examples()
    summaries = []
    for pair in pairs:
        bundle = build_summary_prompt(pair, examples)
        completion = gateway.complete(
            CompletionRequest(prompt=bundle.text, max_tokens=max_tokens, stop_sequences=("\n",))
        )
        text = completion.strip()
        if not text:
            raise EmptyCompletion(f"empty summary for {instance_id} pair {pair.index}")
        summaries.append(Summary(text=text, source_index=pair.index, instance_id=instance_id))
    return summaries


def info_text_for_mode(mode: str, pair: QAPair, summary: Summary | None) -> str:
    if mode == "q":
        return pair.sub_question
    if mode == "a":
        return pair.answer
    if mode == "qa":
        return qa_pair_text(pair)
    if mode == "s":
        if summary is None:
            raise ValueError(f"pair {pair.index} has no summary for mode 's'")
        return summary.text
    raise ValueError(f"unknown single filter mode {mode!r}")


def contribution_score(
    model: FilterModel,
    question_embed,
    info_embed,
    visual_embed,
) -> float:
    return filter_score(model, fuse_features(question_embed, info_embed, visual_embed))


def build_supervision(
    instances: list[VQAInstance],
    generated: Mapping[str, GeneratedInfo],
    answer_fn: Callable[[VQAInstance, str], str],
    evaluator: Callable[[str, list[str]], float],
    embed_text_fn: Callable[[str], EmbeddingVector],
    embed_image_fn: Callable[[str], EmbeddingVector],
    modes: tuple[str, ...] = ("q", "a", "qa", "s"),
) -> list[FilterSample]:
    """Label every (instance, info item, mode text) by answering with that item alone.

    The label is 1 iff the evaluator's accuracy for the predicted answer is
    strictly positive. Instances with no generated info are skipped and
    logged.
    """
    samples = []
    for instance in instances:
        info = generated.get(instance.question_id)
        if info is None or not info.pairs:
            logger.warning("no generated info for %s; skipping", instance.question_id)
            continue
        question_embed = embed_text_fn(instance.question)
        visual_embed = embed_image_fn(instance.image_ref)
        for pair in info.pairs:
            summary = info.summary_for(pair.index)
            for mode in modes:
                if mode == "s" and summary is None:
                    logger.warning(
                        "pair %d of %s lacks a summary; skipping mode 's'",
                        pair.index,
                        instance.question_id,
                    )
                    continue
                text = info_text_for_mode(mode, pair, summary)
                prediction = answer_fn(instance, text)
                accuracy = evaluator(prediction, instance.gold_answers)
                samples.append(
                    FilterSample(
                        question_embed=question_embed.values,
                        info_embed=embed_text_fn(text).values,
                        visual_embed=visual_embed.values,
                        label=1 if accuracy > 0 else 0,
                        question_id=instance.question_id,
                        mode=mode,
                        info_text=text,
                    )
                )
    return samples


def _candidate_scores(
    models: FilterModel | Mapping[str, FilterModel],
    question: str,
    question_embed,
    visual_embed,
    pairs_by_index: Mapping[int, QAPair],
    summaries: list[Summary],
    embed_text_fn: Callable[[str], EmbeddingVector],
) -> tuple[list[float], float]:
    if isinstance(models, FilterModel):
        mode_models = {models.mode: models}
    else:
        mode_models = dict(models)
    per_model_scores: list[list[float]] = []
    per_model_baselines: list[float] = []
    for mode, model in sorted(mode_models.items()):
        baseline = contribution_score(model, question_embed, question_embed, visual_embed)
        per_model_baselines.append(baseline)
        scores = []
        for summary in summaries:
            pair = pairs_by_index.get(summary.source_index)
            if pair is None:
                raise ValueError(
                    f"summary {summary.source_index} of {summary.instance_id} has no QA pair"
                )
            text = info_text_for_mode(mode, pair, summary)
            info_embed = embed_text_fn(text)
            scores.append(contribution_score(model, question_embed, info_embed, visual_embed))
        per_model_scores.append(scores)
    n_models = len(per_model_baselines)
    combined = [sum(col) / n_models for col in zip(*per_model_scores)] if summaries else []
    baseline = sum(per_model_baselines) / n_models
    return combined, baseline


def select_information(
    models: FilterModel | Mapping[str, FilterModel],
    question: str,
    question_embed,
    visual_embed,
    pairs: list[QAPair],
    summaries: list[Summary],
    embed_text_fn: Callable[[str], EmbeddingVector],
) -> SelectionResult:
    """Keep summaries scoring at least the question's own baseline score.

    Returns the kept summaries in non-increasing score order (ties keep
    source order) together with all candidate scores and the baseline.
    """
    pairs_by_index = {pair.index: pair for pair in pairs}
    scores, baseline = _candidate_scores(
        models, question, question_embed, visual_embed, pairs_by_index, summaries, embed_text_fn
    )
    ranked = sorted(
        (i for i in range(len(summaries)) if scores[i] >= baseline),
        key=lambda i: (-scores[i], i),
    )
    return SelectionResult(
        selected=[summaries[i] for i in ranked],
        scores=scores,
        baseline=baseline,
    )
