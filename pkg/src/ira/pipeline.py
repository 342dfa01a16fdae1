"""Stage orchestration for the full inquire -> refine -> answer -> evaluate run.

Every stage reads the previous stage's line-delimited artifact from the
output directory, writes its own, and reports how many instances it
processed. Re-running a completed stage with unchanged inputs is a no-op
(content-hash manifest check). Per-instance failures are logged, counted,
and excluded downstream; they never abort a whole stage.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .answering import (
    EnsembleConfig,
    ExamplePool,
    PoolEntry,
    build_answer_prompt,
    ensemble_predict,
    predict_answer,
    representative_gold,
    selection_embedding,
)
from .artifacts import StageManifest, read_artifact, write_artifact
from .config import PipelineConfig
from .dataset import (
    NormalizationTable,
    VQAInstance,
    answer_score,
    load_dataset,
    load_normalization_table,
    resolve_image_path,
)
from .errors import MissingArtifact, MissingCaption
from .filtering import (
    SINGLE_MODES,
    FilterHyperparams,
    FilterModel,
    FilterSample,
    load_checkpoint,
    save_checkpoint,
    train_filter,
)
from .gateway import ModelGateway
from .inquiry import QAPair, generate_qa_pairs
from .refinement import (
    GeneratedInfo,
    Summary,
    build_supervision,
    select_information,
    summarize_pairs,
)
from .reporting import evaluate_predictions, write_eval_report

logger = logging.getLogger(__name__)

STAGES = (
    "caption",
    "inquire",
    "summarize",
    "supervise",
    "train-filter",
    "select",
    "answer",
    "evaluate",
)


@dataclass
class StageReport:
    stage: str
    instances_processed: int
    failures: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    skipped: bool = False
    outputs: list[str] = field(default_factory=list)
    details: dict | None = None

    def to_dict(self) -> dict:
        data = {
            "stage": self.stage,
            "instances_processed": self.instances_processed,
            "failures": len(self.failures),
            "failed_ids": [f["question_id"] for f in self.failures],
            "wall_time": self.wall_time,
            "skipped": self.skipped,
            "outputs": self.outputs,
        }
        if self.details is not None:
            data["details"] = self.details
        return data


def _content_key(kind: str, ref: str) -> str:
    return hashlib.sha256(f"{kind}\x1f{ref}".encode("utf-8")).hexdigest()


class Pipeline:
    """Binds a validated config to a gateway and the stage implementations."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.gateway = ModelGateway(
            config.endpoints,
            cache_dir=config.cache_dir,
            stub_fixtures=config.stub_fixtures,
        )
        self._instances_cache: dict[str, list[VQAInstance]] = {}
        self._table: NormalizationTable | None = (
            load_normalization_table() if config.normalization == "official" else None
        )

    # -- shared helpers ----------------------------------------------------

    def splits(self) -> list[str]:
        splits = [self.config.train_split]
        if self.config.eval_split != self.config.train_split:
            splits.append(self.config.eval_split)
        return splits

    def instances(self, split: str) -> list[VQAInstance]:
        if split not in self._instances_cache:
            self._instances_cache[split] = load_dataset(
                self.config.dataset_dir, self.config.dataset_format, split
            )
        return self._instances_cache[split]

    def image_path(self, instance: VQAInstance) -> str:
        return str(resolve_image_path(instance.image_ref, self.config.image_root))

    def score(self, prediction: str, golds: list[str]) -> float:
        return answer_score(prediction, golds, self._table)

    def _questions_file(self, split: str) -> Path:
        return Path(self.config.dataset_dir) / f"questions_{split}.json"

    def _annotations_file(self, split: str) -> Path:
        return Path(self.config.dataset_dir) / f"annotations_{split}.json"

    def _dataset_files(self, splits: list[str]) -> list[Path]:
        files = []
        for split in splits:
            files.append(self._questions_file(split))
            annotations = self._annotations_file(split)
            if annotations.exists():
                files.append(annotations)
        return files

    # artifact paths
    def captions_path(self, split: str) -> Path:
        return self.out / f"captions_{split}.jsonl"

    def inquire_path(self, split: str) -> Path:
        return self.out / f"inquire_{split}.jsonl"

    def summaries_path(self, split: str) -> Path:
        return self.out / f"summaries_{split}.jsonl"

    @property
    def supervision_path(self) -> Path:
        return self.out / "supervision.jsonl"

    @property
    def embeddings_path(self) -> Path:
        return self.out / "embeddings.jsonl"

    def filter_path(self, mode: str) -> Path:
        base = Path(self.config.filter_dir) if self.config.filter_dir else self.out / "filters"
        return base / f"filter_{mode}.json"

    def selected_path(self, split: str) -> Path:
        return self.out / f"selected_{split}.jsonl"

    @property
    def predictions_path(self) -> Path:
        return self.out / f"predictions_{self.config.eval_split}.jsonl"

    def filter_modes(self) -> tuple[str, ...]:
        if self.config.filter_mode == "ensemble":
            return SINGLE_MODES
        return (self.config.filter_mode,)

    def load_filters(self) -> FilterModel | dict[str, FilterModel]:
        if self.config.filter_mode == "ensemble":
            return {mode: load_checkpoint(self.filter_path(mode)) for mode in SINGLE_MODES}
        return load_checkpoint(self.filter_path(self.config.filter_mode))

    def _process(self, items: list, fn):
        """Apply fn per instance, collecting per-instance failures instead of aborting."""
        results, failures = [], []
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                futures = [(item, pool.submit(fn, item)) for item in items]
                for item, future in futures:
                    try:
                        results.append((item, future.result()))
                    except Exception as e:
                        logger.warning("instance %s failed: %s", item.question_id, e)
                        failures.append(
                            {"question_id": item.question_id, "error": f"{type(e).__name__}: {e}"}
                        )
        else:
            for item in items:
                try:
                    results.append((item, fn(item)))
                except Exception as e:
                    logger.warning("instance %s failed: %s", item.question_id, e)
                    failures.append(
                        {"question_id": item.question_id, "error": f"{type(e).__name__}: {e}"}
                    )
        return results, failures

    @staticmethod
    def _by_qid(records: list[dict]) -> dict[str, dict]:
        return {record["question_id"]: record for record in records}

    @staticmethod
    def _pairs_from_record(record: dict) -> list[QAPair]:
        return [
            QAPair(sub_question=q, answer=a, index=i)
            for i, (q, a) in enumerate(
                zip(record["sub_questions"], record["answers"]), start=1
            )
        ]

    @staticmethod
    def _summaries_from_record(record: dict, question_id: str) -> list[Summary]:
        return [
            Summary(text=s["text"], source_index=s["source_index"], instance_id=question_id)
            for s in record["summaries"]
        ]

    def generated_info(self, split: str, stage: str) -> dict[str, GeneratedInfo]:
        """Join the inquire and summarize artifacts for one split."""
        inquire = self._by_qid(read_artifact(self.inquire_path(split), "inquire", "inquire"))
        summaries = self._by_qid(
            read_artifact(self.summaries_path(split), "summaries", "summarize")
        )
        joined = {}
        for qid, record in inquire.items():
            summary_record = summaries.get(qid, {"summaries": []})
            joined[qid] = GeneratedInfo(
                pairs=self._pairs_from_record(record),
                summaries=self._summaries_from_record(summary_record, qid),
            )
        return joined

    # -- stage runner --------------------------------------------------------

    def run(self, stage: str) -> StageReport:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        started = time.perf_counter()
        impl, inputs, outputs = self._stage_plan(stage)
        for path, producer in inputs:
            if not path.exists():
                if producer == "dataset":
                    raise MissingArtifact("dataset")
                raise MissingArtifact(producer)
        manifest = StageManifest(self.out, stage)
        fingerprint = {"stage": stage, "config": self.config.fingerprint()}
        input_hash = manifest.input_hash(fingerprint, [p for p, _ in inputs])
        if manifest.is_current(input_hash, outputs):
            return StageReport(
                stage=stage,
                instances_processed=0,
                skipped=True,
                wall_time=time.perf_counter() - started,
                outputs=[str(p) for p in outputs],
            )
        processed, failures, details = impl()
        manifest.record(input_hash, outputs)
        return StageReport(
            stage=stage,
            instances_processed=processed,
            failures=failures,
            wall_time=time.perf_counter() - started,
            outputs=[str(p) for p in outputs],
            details=details,
        )

    def _stage_plan(self, stage: str):
        config = self.config
        splits = self.splits()
        eval_split = config.eval_split
        train_split = config.train_split
        select_splits = [eval_split] + ([train_split] if config.refine_examples else [])
        if stage == "caption":
            return (
                self._stage_caption,
                [(p, "dataset") for p in self._dataset_files(splits)],
                [self.captions_path(s) for s in splits],
            )
        if stage == "inquire":
            return (
                self._stage_inquire,
                [(p, "dataset") for p in self._dataset_files(splits)]
                + [(self.captions_path(s), "caption") for s in splits],
                [self.inquire_path(s) for s in splits],
            )
        if stage == "summarize":
            return (
                self._stage_summarize,
                [(self.inquire_path(s), "inquire") for s in splits],
                [self.summaries_path(s) for s in splits],
            )
        if stage == "supervise":
            return (
                self._stage_supervise,
                [(p, "dataset") for p in self._dataset_files([train_split])]
                + [
                    (self.captions_path(train_split), "caption"),
                    (self.inquire_path(train_split), "inquire"),
                    (self.summaries_path(train_split), "summarize"),
                ],
                [self.supervision_path, self.embeddings_path],
            )
        if stage == "train-filter":
            return (
                self._stage_train_filter,
                [
                    (self.supervision_path, "supervise"),
                    (self.embeddings_path, "supervise"),
                ],
                [self.filter_path(mode) for mode in self.filter_modes()],
            )
        if stage == "select":
            return (
                self._stage_select,
                [(self.filter_path(mode), "train-filter") for mode in self.filter_modes()]
                + [(self.inquire_path(s), "inquire") for s in select_splits]
                + [(self.summaries_path(s), "summarize") for s in select_splits],
                [self.selected_path(s) for s in select_splits],
            )
        if stage == "answer":
            info_source = (
                self.selected_path(train_split)
                if config.refine_examples
                else self.summaries_path(train_split)
            )
            return (
                self._stage_answer,
                [(p, "dataset") for p in self._dataset_files(splits)]
                + [
                    (self.captions_path(train_split), "caption"),
                    (self.captions_path(eval_split), "caption"),
                    (info_source, "select" if config.refine_examples else "summarize"),
                    (self.selected_path(eval_split), "select"),
                ],
                [self.predictions_path],
            )
        if stage == "evaluate":
            return (
                self._stage_evaluate,
                [
                    (self.predictions_path, "answer"),
                    (self._questions_file(eval_split), "dataset"),
                    (self._annotations_file(eval_split), "dataset"),
                ],
                [
                    self.out / "report" / "report.json",
                    self.out / "report" / "per_question.csv",
                    self.out / "report" / "score_hist.png",
                ],
            )
        raise ValueError(f"unknown stage {stage!r}")

    # -- stage implementations ------------------------------------------------

    def _stage_caption(self):
        total, failures = 0, []
        for split in self.splits():
            instances = self.instances(split)

            def fn(inst: VQAInstance) -> str:
                if inst.caption:
                    return inst.caption
                question = inst.question if self.config.variant == "promptcap" else None
                return self.gateway.caption(self.image_path(inst), question)

            results, fails = self._process(instances, fn)
            write_artifact(
                self.captions_path(split),
                "captions",
                [{"question_id": i.question_id, "caption": c} for i, c in results],
            )
            total += len(results)
            failures.extend(fails)
        return total, failures, None

    def _stage_inquire(self):
        total, failures = 0, []
        for split in self.splits():
            captions = self._by_qid(
                read_artifact(self.captions_path(split), "captions", "caption")
            )
            instances = self.instances(split)

            def fn(inst: VQAInstance) -> dict:
                record = captions.get(inst.question_id)
                if record is None:
                    raise MissingCaption(f"no caption for {inst.question_id}")
                with_caption = dataclasses.replace(inst, caption=record["caption"])
                pairs = generate_qa_pairs(
                    with_caption,
                    self.gateway,
                    self.config.k,
                    max_tokens=self.config.max_generation_tokens,
                )
                return {
                    "question_id": inst.question_id,
                    "caption": record["caption"],
                    "sub_questions": [p.sub_question for p in pairs],
                    "answers": [p.answer for p in pairs],
                }

            results, fails = self._process(instances, fn)
            write_artifact(self.inquire_path(split), "inquire", [r for _, r in results])
            total += len(results)
            failures.extend(fails)
        return total, failures, None

    def _stage_summarize(self):
        total, failures = 0, []
        for split in self.splits():
            records = read_artifact(self.inquire_path(split), "inquire", "inquire")
            instances = {i.question_id: i for i in self.instances(split)}
            items = [instances[r["question_id"]] for r in records if r["question_id"] in instances]
            by_qid = self._by_qid(records)

            def fn(inst: VQAInstance) -> dict:
                pairs = self._pairs_from_record(by_qid[inst.question_id])
                summaries = summarize_pairs(
                    self.gateway,
                    inst.question_id,
                    pairs,
                    max_tokens=self.config.max_summary_tokens,
                )
                return {
                    "question_id": inst.question_id,
                    "summaries": [
                        {"text": s.text, "source_index": s.source_index} for s in summaries
                    ],
                }

            results, fails = self._process(items, fn)
            write_artifact(self.summaries_path(split), "summaries", [r for _, r in results])
            total += len(results)
            failures.extend(fails)
        return total, failures, None

    def _answer_with_info(self, instance: VQAInstance, caption: str, info: list[str]) -> str:
        """Zero-shot query-template prediction used for supervision and probing."""
        bundle = build_answer_prompt(instance, caption, [], info, self.config.variant)
        return predict_answer(self.gateway, bundle, max_tokens=self.config.max_answer_tokens)

    def _stage_supervise(self):
        train_split = self.config.train_split
        captions = self._by_qid(
            read_artifact(self.captions_path(train_split), "captions", "caption")
        )
        generated = self.generated_info(train_split, "supervise")
        instances = [
            inst for inst in self.instances(train_split) if inst.question_id in captions
        ]

        embeddings: dict[str, dict] = {}

        def embed_text(text: str):
            vec = self.gateway.embed_text(text)
            embeddings[_content_key("text", text)] = {
                "key": _content_key("text", text),
                "kind": "text",
                "ref": text,
                "dim": vec.dim,
                "values": vec.values.tolist(),
            }
            return vec

        def embed_image(ref: str):
            vec = self.gateway.embed_image(ref)
            embeddings[_content_key("image", ref)] = {
                "key": _content_key("image", ref),
                "kind": "image",
                "ref": ref,
                "dim": vec.dim,
                "values": vec.values.tolist(),
            }
            return vec

        def answer_fn(inst: VQAInstance, info_text: str) -> str:
            return self._answer_with_info(inst, captions[inst.question_id]["caption"], [info_text])

        def fn(inst: VQAInstance) -> list[FilterSample]:
            return build_supervision(
                [inst],
                generated,
                answer_fn,
                self.score,
                embed_text,
                lambda ref, inst=inst: embed_image(self.image_path(inst)),
                modes=self.filter_modes(),
            )

        results, failures = self._process(instances, fn)
        samples = [s for _, batch in results for s in batch]
        write_artifact(
            self.supervision_path,
            "supervision",
            [
                {
                    "question_id": s.question_id,
                    "mode": s.mode,
                    "info_text": s.info_text,
                    "label": s.label,
                }
                for s in samples
            ],
        )
        write_artifact(
            self.embeddings_path,
            "embeddings",
            [embeddings[key] for key in sorted(embeddings)],
        )
        return len(results), failures, {"samples": len(samples)}

    def _stage_train_filter(self):
        records = read_artifact(self.supervision_path, "supervision", "supervise")
        embeddings = {
            r["key"]: r for r in read_artifact(self.embeddings_path, "embeddings", "supervise")
        }
        instances = {i.question_id: i for i in self.instances(self.config.train_split)}
        hyperparams = FilterHyperparams()
        details = {}
        for mode in self.filter_modes():
            samples = []
            for record in records:
                if record["mode"] != mode:
                    continue
                inst = instances[record["question_id"]]
                question_key = _content_key("text", inst.question)
                info_key = _content_key("text", record["info_text"])
                image_key = _content_key("image", self.image_path(inst))
                samples.append(
                    FilterSample(
                        question_embed=embeddings[question_key]["values"],
                        info_embed=embeddings[info_key]["values"],
                        visual_embed=embeddings[image_key]["values"],
                        label=record["label"],
                        question_id=record["question_id"],
                        mode=mode,
                        info_text=record["info_text"],
                    )
                )
            if not samples:
                raise MissingArtifact("supervise")
            result = train_filter(samples, mode, hyperparams, seed=self.config.seed)
            path = self.filter_path(mode)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(result.model, path, hyperparams)
            details[mode] = {"final_loss": result.final_loss, "samples": len(samples)}
        return len(records), [], details

    def _stage_select(self):
        models = self.load_filters()
        splits = [self.config.eval_split]
        if self.config.refine_examples:
            splits.append(self.config.train_split)
        total, failures = 0, []
        for split in splits:
            generated = self.generated_info(split, "select")
            instances = [i for i in self.instances(split) if i.question_id in generated]

            def fn(inst: VQAInstance) -> dict:
                info = generated[inst.question_id]
                if not info.pairs or not info.summaries:
                    return {
                        "question_id": inst.question_id,
                        "selected": [],
                        "selected_indices": [],
                        "scores": [],
                        "baseline": None,
                    }
                question_embed = self.gateway.embed_text(inst.question)
                visual_embed = self.gateway.embed_image(self.image_path(inst))
                result = select_information(
                    models,
                    inst.question,
                    question_embed,
                    visual_embed,
                    info.pairs,
                    info.summaries,
                    self.gateway.embed_text,
                )
                return {
                    "question_id": inst.question_id,
                    "selected": [s.text for s in result.selected],
                    "selected_indices": [s.source_index for s in result.selected],
                    "scores": result.scores,
                    "baseline": result.baseline,
                }

            results, fails = self._process(instances, fn)
            write_artifact(self.selected_path(split), "selected", [r for _, r in results])
            total += len(results)
            failures.extend(fails)
        return total, failures, None

    def build_example_pool(self) -> ExamplePool:
        """In-context example pool from the train split artifacts."""
        train_split = self.config.train_split
        captions = self._by_qid(
            read_artifact(self.captions_path(train_split), "captions", "caption")
        )
        if self.config.refine_examples:
            info_records = self._by_qid(
                read_artifact(self.selected_path(train_split), "selected", "select")
            )
            info_of = lambda qid: info_records.get(qid, {}).get("selected", [])
        else:
            summary_records = self._by_qid(
                read_artifact(self.summaries_path(train_split), "summaries", "summarize")
            )
            info_of = lambda qid: [
                s["text"] for s in summary_records.get(qid, {}).get("summaries", [])
            ]
        entries = []
        for inst in self.instances(train_split):
            record = captions.get(inst.question_id)
            if record is None or not inst.gold_answers:
                continue
            caption = record["caption"]
            entries.append(
                PoolEntry(
                    instance=dataclasses.replace(inst, caption=caption),
                    question_embed=self.gateway.embed_text(inst.question).values,
                    caption_embed=self.gateway.embed_text(caption).values,
                    info=info_of(inst.question_id),
                    gold=representative_gold(inst.gold_answers),
                )
            )
        return ExamplePool(entries=entries)

    def _stage_answer(self):
        config = self.config
        pool = self.build_example_pool()
        captions = self._by_qid(
            read_artifact(self.captions_path(config.eval_split), "captions", "caption")
        )
        selected = self._by_qid(
            read_artifact(self.selected_path(config.eval_split), "selected", "select")
        )
        ensemble_cfg = EnsembleConfig(
            queries=config.ensemble_queries,
            shots=config.resolved_shots(),
            disjoint=not config.overlap_windows,
        )
        instances = [
            i for i in self.instances(config.eval_split) if i.question_id in captions
        ]

        def fn(inst: VQAInstance) -> dict:
            caption = captions[inst.question_id]["caption"]
            refined = selected.get(inst.question_id, {}).get("selected", [])
            query_embedding = selection_embedding(
                self.gateway.embed_text(inst.question).values,
                self.gateway.embed_text(caption).values,
            )
            prediction = ensemble_predict(
                self.gateway,
                pool,
                inst,
                caption,
                query_embedding,
                refined,
                ensemble_cfg,
                config.variant,
                max_tokens=config.max_answer_tokens,
            )
            return {
                "question_id": inst.question_id,
                "answer": prediction.answer,
                "per_query_answers": prediction.per_query_answers,
                "prompt_hashes": prediction.prompt_hashes,
            }

        results, failures = self._process(instances, fn)
        write_artifact(self.predictions_path, "predictions", [r for _, r in results])
        return len(results), failures, None

    def _stage_evaluate(self):
        predictions = read_artifact(self.predictions_path, "predictions", "answer")
        instances = self.instances(self.config.eval_split)
        report = evaluate_predictions(predictions, instances, self._table)
        write_eval_report(report, self.out / "report")
        return (
            len(report.per_question),
            [],
            {"overall_accuracy": report.overall_accuracy, "excluded": len(report.excluded)},
        )


def run_stage(config: PipelineConfig, stage: str) -> list[StageReport]:
    """Run one named stage, or every stage in order for ``all``."""
    pipeline = Pipeline(config)
    if stage == "all":
        return [pipeline.run(name) for name in STAGES]
    return [pipeline.run(stage)]
