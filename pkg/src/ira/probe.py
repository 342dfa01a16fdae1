"""QA-pair probing: answer the original question under different context

modes (none, all pairs, one random pair, best option) and report soft
accuracy per mode. "best" takes the per-question maximum over a superset of
the other modes' options (no context, all pairs together, and each single
pair), so it upper-bounds every other mode on the same inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .artifacts import read_artifact
from .config import PipelineConfig
from .dataset import VQAInstance
from .inquiry import qa_pair_text
from .pipeline import Pipeline
from .reporting import write_probe_report
from .stubs import digest_int

PROBE_MODES = ("original", "all", "random", "best")


@dataclass
class ProbeReport:
    mode: str
    accuracy: float
    per_question: list[dict] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "per_question": self.per_question,
            "excluded": self.excluded,
            "wall_time": self.wall_time,
            "outputs": self.outputs,
        }


def probe_qa_modes(config: PipelineConfig, mode: str, write_outputs: bool = True) -> ProbeReport:
    """Evaluate one context mode over the eval split's generated QA pairs."""
    if mode not in PROBE_MODES:
        raise ValueError(f"unknown probe mode {mode!r}; expected one of {PROBE_MODES}")
    started = time.perf_counter()
    pipeline = Pipeline(config)
    split = config.eval_split
    captions = pipeline._by_qid(
        read_artifact(pipeline.captions_path(split), "captions", "caption")
    )
    inquire = pipeline._by_qid(read_artifact(pipeline.inquire_path(split), "inquire", "inquire"))

    per_question = []
    excluded = []
    for instance in pipeline.instances(split):
        qid = instance.question_id
        if qid not in captions or qid not in inquire:
            excluded.append(qid)
            continue
        caption = captions[qid]["caption"]
        pairs = pipeline._pairs_from_record(inquire[qid])
        pair_texts = [qa_pair_text(p) for p in pairs]
        answer, score = _run_mode(pipeline, instance, caption, pair_texts, mode)
        per_question.append({"question_id": qid, "answer": answer, "score": score})

    accuracy = (
        sum(entry["score"] for entry in per_question) / len(per_question) if per_question else 0.0
    )
    outputs = []
    if write_outputs:
        outputs = [
            str(p)
            for p in write_probe_report(mode, accuracy, per_question, pipeline.out / "probe")
        ]
    return ProbeReport(
        mode=mode,
        accuracy=accuracy,
        per_question=per_question,
        excluded=excluded,
        wall_time=time.perf_counter() - started,
        outputs=outputs,
    )


def _run_mode(
    pipeline: Pipeline,
    instance: VQAInstance,
    caption: str,
    pair_texts: list[str],
    mode: str,
) -> tuple[str, float]:
    def attempt(info: list[str]) -> tuple[str, float]:
        answer = pipeline._answer_with_info(instance, caption, info)
        return answer, pipeline.score(answer, instance.gold_answers)

    if mode == "original":
        return attempt([])
    if mode == "all":
        return attempt(pair_texts)
    if mode == "random":
        if not pair_texts:
            return attempt([])
        rng = np.random.default_rng(
            digest_int(pipeline.config.seed, "probe-random", instance.question_id)
        )
        return attempt([pair_texts[int(rng.integers(len(pair_texts)))]])
    # best: max over the no-context, all-pairs, and every single-pair option
    options = [[], list(pair_texts)] + [[text] for text in pair_texts]
    best_answer, best_score = "", -1.0
    for option in options:
        answer, score = attempt(option)
        if score > best_score:
            best_answer, best_score = answer, score
    return best_answer, best_score
