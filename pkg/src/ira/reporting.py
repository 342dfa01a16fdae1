"""Accuracy reports: JSON + CSV next to rendered matplotlib figures."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .dataset import NormalizationTable, VQAInstance, answer_score  # noqa: E402


@dataclass
class EvalReport:
    overall_accuracy: float
    per_question: list[dict] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_question": self.per_question,
            "excluded": self.excluded,
            "excluded_count": len(self.excluded),
        }


def evaluate_predictions(
    predictions: list[dict],
    instances: list[VQAInstance],
    table: NormalizationTable | None = None,
) -> EvalReport:
    """Score predictions against gold answers; unpredicted instances are
    excluded with an explicit count, never silently scored as zero."""
    by_qid = {p["question_id"]: p for p in predictions}
    per_question = []
    excluded = []
    for instance in instances:
        prediction = by_qid.get(instance.question_id)
        if prediction is None:
            excluded.append(instance.question_id)
            continue
        score = answer_score(prediction["answer"], instance.gold_answers, table)
        per_question.append(
            {
                "question_id": instance.question_id,
                "answer": prediction["answer"],
                "score": score,
            }
        )
    overall = (
        sum(entry["score"] for entry in per_question) / len(per_question) if per_question else 0.0
    )
    return EvalReport(overall_accuracy=overall, per_question=per_question, excluded=excluded)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _score_histogram(path: Path, scores: list[float], title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(scores, bins=10, range=(0.0, 1.0), color="#4878a8", edgecolor="black")
    ax.set_xlabel("soft accuracy")
    ax.set_ylabel("questions")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_eval_report(report: EvalReport, directory: str | Path) -> list[Path]:
    """Write report.json, per_question.csv and the score histogram figure."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / "report.json"
    csv_path = directory / "per_question.csv"
    fig_path = directory / "score_hist.png"
    json_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
    _write_csv(csv_path, ["question_id", "answer", "score"], report.per_question)
    _score_histogram(
        fig_path,
        [entry["score"] for entry in report.per_question],
        f"overall accuracy {report.overall_accuracy:.4f}",
    )
    return [json_path, csv_path, fig_path]


def write_probe_report(
    mode: str, overall: float, per_question: list[dict], directory: str | Path
) -> list[Path]:
    """Write probe_<mode>.{json,csv,png} for one probing mode."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"probe_{mode}.json"
    csv_path = directory / f"probe_{mode}.csv"
    fig_path = directory / f"probe_{mode}.png"
    json_path.write_text(
        json.dumps(
            {"mode": mode, "accuracy": overall, "per_question": per_question},
            sort_keys=True,
            indent=2,
        ),
        encoding="utf-8",
    )
    _write_csv(csv_path, ["question_id", "answer", "score"], per_question)

    fig, ax = plt.subplots(figsize=(6, 4))
    qids = [entry["question_id"] for entry in per_question]
    scores = [entry["score"] for entry in per_question]
    ax.bar(range(len(qids)), scores, color="#4878a8", edgecolor="black")
    ax.set_xticks(range(len(qids)))
    ax.set_xticklabels(qids, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("soft accuracy")
    ax.set_title(f"probe mode {mode}: accuracy {overall:.4f}")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=100)
    plt.close(fig)
    return [json_path, csv_path, fig_path]
