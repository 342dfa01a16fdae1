"""Inquire-refine-answer pipeline for knowledge-based VQA.

An LLM decomposes each visual question into sub-questions about missing
image details, a VQA model answers them, a trained embedding-fusion filter
keeps the helpful summaries, and a few-shot prompt produces the final
answer, scored with soft VQA accuracy.
"""

from .answering import (
    EnsembleConfig,
    EnsemblePrediction,
    ExamplePool,
    PoolEntry,
    build_answer_prompt,
    ensemble_predict,
    majority_vote,
    predict_answer,
    select_examples,
)
from .config import PipelineConfig, load_config
from .dataset import (
    VQAInstance,
    answer_score,
    load_dataset,
    normalize_answer,
    soft_accuracy,
)
from .filtering import (
    FilterHyperparams,
    FilterModel,
    FilterSample,
    bce_loss,
    filter_score,
    fuse_features,
    load_checkpoint,
    save_checkpoint,
    train_filter,
)
from .gateway import (
    CompletionRequest,
    EmbeddingVector,
    ModelGateway,
    ServiceEndpointConfig,
    stub_endpoints,
)
from .inquiry import (
    QAPair,
    QuestionGenExample,
    build_question_gen_prompt,
    generate_qa_pairs,
    parse_subquestions,
)
from .pipeline import STAGES, Pipeline, StageReport, run_stage
from .probe import probe_qa_modes
from .prompts import PromptBundle
from .refinement import (
    GeneratedInfo,
    SelectionResult,
    Summary,
    build_summary_prompt,
    build_supervision,
    select_information,
    summarize_pairs,
)

__version__ = "0.1.0"

__all__ = [
    "EnsembleConfig",
    "EnsemblePrediction",
    "ExamplePool",
    "PoolEntry",
    "build_answer_prompt",
    "ensemble_predict",
    "majority_vote",
    "predict_answer",
    "select_examples",
    "PipelineConfig",
    "load_config",
    "VQAInstance",
    "answer_score",
    "load_dataset",
    "normalize_answer",
    "soft_accuracy",
    "FilterHyperparams",
    "FilterModel",
    "FilterSample",
    "bce_loss",
    "filter_score",
    "fuse_features",
    "load_checkpoint",
    "save_checkpoint",
    "train_filter",
    "CompletionRequest",
    "EmbeddingVector",
    "ModelGateway",
    "ServiceEndpointConfig",
    "stub_endpoints",
    "QAPair",
    "QuestionGenExample",
    "build_question_gen_prompt",
    "generate_qa_pairs",
    "parse_subquestions",
    "STAGES",
    "Pipeline",
    "StageReport",
    "run_stage",
    "probe_qa_modes",
    "PromptBundle",
    "GeneratedInfo",
    "SelectionResult",
    "Summary",
    "build_summary_prompt",
    "build_supervision",
    "select_information",
    "summarize_pairs",
]
