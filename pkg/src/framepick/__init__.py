"""Differentiable question-aware video frame selection.

Three per-frame scores (question-frame similarity, question-frame matching,
inter-frame distinctiveness) feed a relaxed top-k sampler so a toy VideoQA
answer generator can be trained end to end, with gradients flowing from the
answer loss back into the frame scorer.
"""

from .autodiff import Graph, GradCheckReport, Node, ParameterStore, grad_check
from .bench import (
    ABLATION_VARIANTS,
    AblationResult,
    BenchConfig,
    BenchMetrics,
    SyntheticDataset,
    evaluate,
    generate_dataset,
    run_ablation,
    split_dataset,
)
from .errors import ContractError, DomainError, EvaluationError, FormatError, ShapeError
from .fileio import (
    Manifest,
    ManifestEntry,
    load_instances,
    load_manifest,
    load_model,
    read_embeddings,
    save_manifest,
    save_model,
    write_dataset,
    write_embeddings,
)
from .pipeline import (
    GeneratorParams,
    InferResult,
    Model,
    StepReport,
    TrainConfig,
    VideoQAInstance,
    answer_logits,
    answer_loss,
    infer,
    train,
    training_step,
)
from .sampler import (
    SamplerConfig,
    SelectionResult,
    efraimidis_indices,
    gumbel_keys,
    hard_topk,
    relaxed_topk,
    selection_probabilities,
    wrs_indices,
)
from .scoring import (
    MECHANISMS,
    FrameSet,
    ModelDims,
    QuestionEmbedding,
    ScoreBreakdown,
    ScorerParams,
    aggregate_scores,
    ifd_scores,
    ifd_values,
    pairwise_similarity,
    qfm_scores,
    qfs_scores,
    score_frames,
)

__version__ = "0.1.0"
