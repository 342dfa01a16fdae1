"""OK-VQA / A-OKVQA style dataset loading and soft-accuracy scoring.

File layout expected under the dataset directory:

    questions_<split>.json    {"questions": [{"question_id", "image_id" | "image",
                                              "question", ...optional fields}]}
    annotations_<split>.json  {"annotations": [{"question_id",
                                                "answers": [{"answer": ...}, ...]}]}

The annotations file is required for train/val splits and optional for test.
Question entries may carry optional "caption", "tags" and "candidates"
fields (candidates as [answer, confidence] pairs) which are attached to the
loaded instances verbatim.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AnnotationMismatch, MalformedRecord, MissingFile, WrongAnnotationCount

SPLITS = ("train", "val", "test")

ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = frozenset(string.punctuation)


@dataclass
class VQAInstance:
    """One dataset row: a question about an image plus its gold answers."""

    question_id: str
    image_ref: str
    question: str
    gold_answers: list[str]
    caption: str | None = None
    tags: list[str] | None = None
    candidates: list[tuple[str, float]] | None = None
    split: str = "train"

    def __post_init__(self):
        if not self.question:
            raise MalformedRecord(self.question_id, "question is empty")
        if self.candidates is not None:
            for answer, conf in self.candidates:
                if not 0.0 <= conf <= 1.0:
                    raise MalformedRecord(
                        self.question_id,
                        f"candidate confidence {conf!r} for {answer!r} outside [0, 1]",
                    )


@dataclass
class NormalizationTable:
    """Optional official-evaluator style maps applied on top of the base rules."""

    contractions: dict[str, str] = field(default_factory=dict)
    number_words: dict[str, str] = field(default_factory=dict)
    punct_between_words_to_space: bool = True


def load_normalization_table(path: str | Path | None = None) -> NormalizationTable:
    """Load a normalization table; defaults to the bundled official-style maps."""
    if path is None:
        path = Path(__file__).parent / "assets" / "normalization_official.json"
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return NormalizationTable(
        contractions=raw.get("contractions", {}),
        number_words=raw.get("number_words", {}),
        punct_between_words_to_space=raw.get("punct_between_words_to_space", True),
    )


def _strip_punctuation(text: str, to_space: bool = False) -> str:
    # An apostrophe is kept only when flanked by alphanumerics (inside a word).
    out = []
    for i, ch in enumerate(text):
        if ch in _PUNCT:
            if (
                ch == "'"
                and 0 < i < len(text) - 1
                and text[i - 1].isalnum()
                and text[i + 1].isalnum()
            ):
                out.append(ch)
            elif to_space:
                out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def normalize_answer(raw: str, table: NormalizationTable | None = None) -> str:
    """Canonicalize an answer string for matching.

    Base rules: lowercase, trim, drop punctuation (keeping intra-word
    apostrophes), drop standalone articles, collapse whitespace. When a
    ``NormalizationTable`` is supplied its contraction/number-word maps are
    applied on top, approximating the official VQA evaluator.
    """
    text = raw.lower().strip()
    to_space = table.punct_between_words_to_space if table is not None else False
    text = _strip_punctuation(text, to_space=to_space)
    tokens = [t for t in text.split() if t not in ARTICLES]
    if table is not None:
        tokens = [table.number_words.get(t, t) for t in tokens]
        tokens = [table.contractions.get(t, t) for t in tokens]
    return " ".join(tokens)


def soft_accuracy(
    prediction: str,
    gold_answers: list[str],
    table: NormalizationTable | None = None,
) -> float:
    """Soft VQA accuracy over 10 annotations.

    Averages min(matches/3, 1) over the ten leave-one-out subsets of nine
    annotations, matching after ``normalize_answer`` on both sides. Computed
    as an integer numerator over 30 so results are exact and permutation
    invariant.
    """
    if len(gold_answers) != 10:
        raise WrongAnnotationCount(f"expected 10 gold answers, got {len(gold_answers)}")
    pred = normalize_answer(prediction, table)
    matches = sum(1 for gold in gold_answers if normalize_answer(gold, table) == pred)
    # Leaving out a matching annotation gives matches-1; a non-match gives matches.
    numerator = matches * min(matches - 1, 3) + (10 - matches) * min(matches, 3)
    return numerator / 30


def answer_score(
    prediction: str,
    gold_answers: list[str],
    table: NormalizationTable | None = None,
) -> float:
    """Score a prediction against however many gold answers the dataset provides.

    Exactly 10 answers use the leave-one-out soft accuracy; any other count
    (A-OKVQA direct-answer style) degrades to min(matches/3, 1) over the
    full list.
    """
    if len(gold_answers) == 10:
        return soft_accuracy(prediction, gold_answers, table)
    pred = normalize_answer(prediction, table)
    matches = sum(1 for gold in gold_answers if normalize_answer(gold, table) == pred)
    return min(matches / 3, 1.0)


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise MissingFile(str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedRecord(None, f"{path.name} is not valid JSON: {e}") from e


def _parse_candidates(raw, question_id: str) -> list[tuple[str, float]]:
    try:
        return [(str(ans), float(conf)) for ans, conf in raw]
    except (TypeError, ValueError) as e:
        raise MalformedRecord(question_id, f"bad candidates entry: {e}") from e


def load_dataset(path: str | Path, format: str = "okvqa", split: str = "train") -> list[VQAInstance]:
    """Load one split into a list of ``VQAInstance``.

    Questions are joined to annotations by question_id; a question without an
    annotation in an annotated split raises ``AnnotationMismatch``. OK-VQA
    annotations must carry exactly 10 answers.
    """
    if format not in ("okvqa", "aokvqa"):
        raise ValueError(f"unknown dataset format {format!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    root = Path(path)
    questions_doc = _read_json(root / f"questions_{split}.json")
    if "questions" not in questions_doc:
        raise MalformedRecord(None, 'questions file lacks a top-level "questions" array')

    annotations: dict[str, list[str]] = {}
    annotations_path = root / f"annotations_{split}.json"
    annotated = split != "test" or annotations_path.exists()
    if annotated:
        annotations_doc = _read_json(annotations_path)
        for entry in annotations_doc.get("annotations", []):
            qid = str(entry.get("question_id"))
            answers = entry.get("answers")
            if not isinstance(answers, list):
                raise MalformedRecord(qid, "annotation lacks an answers list")
            try:
                answer_strings = [a["answer"] for a in answers]
            except (TypeError, KeyError) as e:
                raise MalformedRecord(qid, f"bad answers entry: {e}") from e
            if format == "okvqa" and len(answer_strings) != 10:
                raise MalformedRecord(
                    qid, f"OK-VQA annotation must have 10 answers, got {len(answer_strings)}"
                )
            annotations[qid] = answer_strings

    instances = []
    for entry in questions_doc["questions"]:
        qid = str(entry.get("question_id"))
        question = entry.get("question")
        if not question:
            raise MalformedRecord(qid, "missing question text")
        image_ref = entry.get("image") or entry.get("image_id")
        if image_ref is None:
            raise MalformedRecord(qid, "missing image reference")
        if annotated and qid not in annotations:
            raise AnnotationMismatch(f"question {qid} has no annotation in split {split!r}")
        candidates = entry.get("candidates")
        instances.append(
            VQAInstance(
                question_id=qid,
                image_ref=str(image_ref),
                question=question,
                gold_answers=annotations.get(qid, []),
                caption=entry.get("caption"),
                tags=list(entry["tags"]) if entry.get("tags") is not None else None,
                candidates=_parse_candidates(candidates, qid) if candidates is not None else None,
                split=split,
            )
        )
    return instances


def resolve_image_path(image_ref: str, image_root: str | Path | None) -> Path:
    """Resolve an instance's image reference against the configured image root."""
    ref = Path(image_ref)
    if ref.is_absolute() or image_root is None:
        return ref
    return Path(image_root) / ref
