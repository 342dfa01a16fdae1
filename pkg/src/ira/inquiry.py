"""Sub-question generation: build the decomposition prompt, parse the

numbered sub-questions out of the completion, and collect VLM answers for
them. The prompt template follows the fixed decomposition instruction with
in-context examples rendered as TARGET-QUESTION / Caption / Sub questions
blocks and a query block that ends at "Sub questions:".
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import VQAInstance
from .errors import MissingCaption, NoQuestionsFound
from .gateway import CompletionRequest, ModelGateway
from .prompts import PromptBundle

QUESTION_GEN_INSTRUCTION = (
    "Please decompose the TARGET-QUESTION into {k} questions that can be answered via "
    "commonsense knowledge. The sub-questions should not mention another sub-questions. "
    "You can use information from the CAPTION."
)

_MARKER = re.compile(r"(?:^|(?<=\s))(\d{1,2})\.(?=\s|$)")


@dataclass
class QuestionGenExample:
    target_question: str
    caption: str
    sub_questions: list[str]

    def __post_init__(self):
        if not self.sub_questions or any(not q for q in self.sub_questions):
            raise ValueError("sub_questions must be non-empty strings")


@dataclass
class QAPair:
    """A generated sub-question with its VLM answer; index is 1-based."""

    sub_question: str
    answer: str
    index: int

    def __post_init__(self):
        if not self.sub_question or not self.answer:
            raise ValueError("sub_question and answer must be non-empty")


def default_question_gen_examples() -> list[QuestionGenExample]:
    path = Path(__file__).parent / "assets" / "question_gen_examples.json"
    raw = json.loads(path.read_text(encoding="utf-8"))
    return [QuestionGenExample(**entry) for entry in raw["examples"]]


def render_subquestion_list(sub_questions: list[str]) -> str:
    return " ".join(f"{i}. {q}" for i, q in enumerate(sub_questions, start=1))


def render_question_gen(slots: dict) -> str:
    parts = [slots["instruction"], "\n"]
    for example in slots["examples"]:
        parts.append(
            f"TARGET-QUESTION: {example['target_question']}\n"
            f"Caption: {example['caption']}\n"
            f"Sub questions: {render_subquestion_list(example['sub_questions'])}\n"
        )
    query = slots["query"]
    parts.append(
        f"TARGET-QUESTION: {query['target_question']}\n"
        f"Caption: {query['caption']}\n"
        f"Sub questions:"
    )
    return "".join(parts)


def build_question_gen_prompt(
    instance: VQAInstance,
    examples: list[QuestionGenExample],
    k: int,
) -> PromptBundle:
    """Render the decomposition prompt for ``instance`` with ``k`` substituted."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not instance.caption:
        raise MissingCaption(f"instance {instance.question_id} has no caption")
    slots = {
        "instruction": QUESTION_GEN_INSTRUCTION.format(k=k),
        "k": k,
        "examples": [
            {
                "target_question": ex.target_question,
                "caption": ex.caption,
                "sub_questions": list(ex.sub_questions),
            }
            for ex in examples
        ],
        "query": {"target_question": instance.question, "caption": instance.caption},
    }
    return PromptBundle(text=render_question_gen(slots), slots=slots, shots=len(examples))


def parse_subquestions(completion: str, k: int) -> list[str]:
    """Extract the numbered items "1." .. "k." from a completion, in order.

    Markers are only recognized at line or sentence boundaries (preceded by
    whitespace or start of text, followed by whitespace), so periods inside a
    question do not split it. Output is truncated to k items.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    markers = [(int(m.group(1)), m.start(), m.end()) for m in _MARKER.finditer(completion)]
    if not markers:
        raise NoQuestionsFound(f"no numbered items in completion: {completion[:80]!r}")
    start = next((i for i, (num, _, _) in enumerate(markers) if num == 1), 0)
    chain = [markers[start]]
    expected = markers[start][0] + 1
    for marker in markers[start + 1 :]:
        if marker[0] == expected:
            chain.append(marker)
            expected += 1
    items = []
    for i, (_, _, text_start) in enumerate(chain):
        text_end = chain[i + 1][1] if i + 1 < len(chain) else len(completion)
        text = completion[text_start:text_end].strip()
        if text:
            items.append(text)
    if not items:
        raise NoQuestionsFound("numbered markers found but every item was empty")
    return items[:k]


def generate_qa_pairs(
    instance: VQAInstance,
    gateway: ModelGateway,
    k: int,
    examples: list[QuestionGenExample] | None = None,
    max_tokens: int = 256,
) -> list[QAPair]:
    """Generate up to ``k`` sub-questions for ``instance`` and answer each via the VQA role."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if examples is None:
        examples = default_question_gen_examples()
    if not instance.caption:
        instance = dataclasses.replace(instance, caption=gateway.caption(instance.image_ref))
    bundle = build_question_gen_prompt(instance, examples, k)
    completion = gateway.complete(CompletionRequest(prompt=bundle.text, max_tokens=max_tokens))
    sub_questions = parse_subquestions(completion, k)
    return [
        QAPair(sub_question=q, answer=gateway.vqa_answer(instance.image_ref, q), index=i)
        for i, q in enumerate(sub_questions, start=1)
    ]


def qa_pair_text(pair: QAPair) -> str:
    """The concatenated question-answer text used as one info item."""
    return f"{pair.sub_question} {pair.answer}"
