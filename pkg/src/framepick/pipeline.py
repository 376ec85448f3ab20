"""End-to-end toy VideoQA: relaxed frame selection feeding a small
differentiable answer generator, trained with a single cross-entropy
objective so gradients reach the frame scorer through the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ParameterStore
from .errors import ContractError, DomainError, ShapeError
from .sampler import SamplerConfig, SelectionResult, hard_topk, relaxed_topk
from .scoring import (
    MECHANISMS,
    FrameSet,
    ModelDims,
    QuestionEmbedding,
    ScoreBreakdown,
    ScorerParams,
    augment_ones_row,
    init_affine,
    score_frames,
)


@dataclass(frozen=True)
class VideoQAInstance:
    """One multiple-choice question over one video."""

    frames: FrameSet
    question: QuestionEmbedding
    options: np.ndarray           # (N, d_t) candidate answer embeddings
    answer_index: int
    planted_keyframes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        options = np.asarray(self.options, dtype=np.float64)
        if options.ndim != 2 or options.shape[0] < 2:
            raise ShapeError(f"VideoQAInstance: need >= 2 option vectors, got shape {options.shape}")
        if not np.isfinite(options).all():
            raise DomainError("VideoQAInstance: non-finite option entries")
        if not 0 <= self.answer_index < options.shape[0]:
            raise ContractError(
                f"VideoQAInstance: answer index {self.answer_index} out of range "
                f"for {options.shape[0]} options"
            )
        if self.planted_keyframes is not None:
            planted = tuple(int(i) for i in self.planted_keyframes)
            m = self.frames.num_frames
            if any(not 0 <= i < m for i in planted) or list(planted) != sorted(set(planted)):
                raise ContractError("VideoQAInstance: planted keyframes must be sorted, unique, in range")
            object.__setattr__(self, "planted_keyframes", planted)
        object.__setattr__(self, "options", options)

    @property
    def num_options(self) -> int:
        return self.options.shape[0]


# affine maps fold their bias as a trailing column, like the scorer tensors
_GENERATOR_SHAPES = {
    "pool": lambda d: (d.d_h, d.d_v + 1),
    "qproj": lambda d: (d.d_h, d.d_t + 1),
    "joint": lambda d: (d.d_h, 2 * d.d_h + 1),
    "opt": lambda d: (d.d_h, d.d_t + 1),
}


@dataclass(frozen=True)
class GeneratorParams:
    """View over the answer generator tensors inside a ParameterStore.

    A pooled visual map, a question projection, a joint map over their
    concatenation, and an affine option projection scored by dot product.
    """

    dims: ModelDims
    store: ParameterStore
    prefix: str = "gen."

    @classmethod
    def initialize(
        cls,
        store: ParameterStore,
        dims: ModelDims,
        rng: np.random.Generator,
        prefix: str = "gen.",
    ) -> "GeneratorParams":
        for name, shape_fn in _GENERATOR_SHAPES.items():
            store.add(prefix + name, init_affine(rng, shape_fn(dims)))
        return cls(dims=dims, store=store, prefix=prefix)

    def node(self, graph: Graph, name: str) -> int:
        return graph.parameter(self.store, self.prefix + name)


@dataclass
class Model:
    """Scorer and generator parameter bundles plus the ablation mask the
    model was built (and must be evaluated) with."""

    dims: ModelDims
    scorer: ScorerParams
    generator: GeneratorParams
    disabled: frozenset[str] = frozenset()

    @classmethod
    def create(
        cls,
        dims: ModelDims = ModelDims(),
        seed: int = 0,
        disabled: frozenset[str] = frozenset(),
    ) -> "Model":
        disabled = frozenset(disabled)
        if not disabled <= set(MECHANISMS):
            raise ContractError(f"unknown mechanisms in ablation mask: {sorted(disabled)}")
        rng = np.random.default_rng(seed)
        scorer = ScorerParams.initialize(ParameterStore(), dims, rng)
        generator = GeneratorParams.initialize(ParameterStore(), dims, rng)
        return cls(dims=dims, scorer=scorer, generator=generator, disabled=disabled)

    def stores(self) -> tuple[ParameterStore, ParameterStore]:
        return self.scorer.store, self.generator.store

    def zero_grads(self) -> None:
        for store in self.stores():
            store.zero_grads()

    def gradient_norms(self) -> dict[str, float]:
        norms: dict[str, float] = {}
        for store in self.stores():
            norms.update(store.gradient_norms())
        return norms


@dataclass(frozen=True)
class TrainConfig:
    k: int = 8
    tau: float = 0.1
    stochastic: bool = True
    learning_rate: float = 0.5
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    disabled: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "disabled", frozenset(self.disabled))
        if self.k < 1:
            raise ContractError(f"TrainConfig: k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise DomainError(f"TrainConfig: tau must be positive, got {self.tau}")
        # rate 0 is allowed so a step can be evaluated without mutation
        if self.learning_rate < 0:
            raise DomainError(f"TrainConfig: learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ContractError(f"TrainConfig: epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"TrainConfig: batch size must be >= 1, got {self.batch_size}")
        if not self.disabled <= set(MECHANISMS):
            raise ContractError(f"unknown mechanisms in ablation mask: {sorted(self.disabled)}")
        if self.disabled >= set(MECHANISMS):
            raise ContractError("empty scorer: all scoring mechanisms are disabled")

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(k=self.k, tau=self.tau, stochastic=self.stochastic)


@dataclass(frozen=True)
class StepReport:
    mean_loss: float
    grad_norms: dict[str, float] = field(repr=False)


@dataclass(frozen=True)
class InferResult:
    predicted_index: int
    selection: SelectionResult
    breakdown: ScoreBreakdown


def answer_logits(
    instance: VideoQAInstance,
    weights_node: int,
    mass: float,
    params: GeneratorParams,
    graph: Graph,
) -> list[int]:
    """One logit node per candidate answer.

    The visual side is the relaxed-weight-gated sum of per-frame pooled
    features divided by ``mass`` (k at train time, k' at inference), so soft
    and hard selections produce comparable magnitudes.
    """
    m = instance.frames.num_frames
    weights = graph.value(weights_node)
    if weights.shape != (m,):
        raise ShapeError(
            f"answer-logits: weight vector shape {weights.shape} does not match {m} frames"
        )
    one = graph.constant(1.0)
    # per-frame pooled features as columns, then one matrix-vector gate
    pooled_columns = graph.apply(
        "tanh",
        graph.apply(
            "matrix-matrix-product",
            params.node(graph, "pool"),
            graph.constant(augment_ones_row(instance.frames.embeddings)),
        ),
    )
    gated = graph.apply("matrix-vector-product", pooled_columns, weights_node)
    pooled_mean = graph.apply("scalar-multiply", graph.constant(1.0 / mass), gated)

    q = graph.constant(np.concatenate([instance.question.vector, [1.0]]))
    qproj = graph.apply(
        "tanh", graph.apply("matrix-vector-product", params.node(graph, "qproj"), q)
    )
    joint = graph.apply(
        "tanh",
        graph.apply(
            "matrix-vector-product",
            params.node(graph, "joint"),
            graph.apply("concat", pooled_mean, qproj, one),
        ),
    )
    opt_w = params.node(graph, "opt")
    logits = []
    for n in range(instance.num_options):
        option = graph.constant(np.concatenate([instance.options[n], [1.0]]))
        projected = graph.apply("matrix-vector-product", opt_w, option)
        logits.append(graph.apply("dot", joint, projected))
    return logits


def answer_loss(logits: list[int], answer_index: int, graph: Graph) -> int:
    """Softmax cross-entropy against the correct option; the sole objective."""
    vec = graph.apply("concat", *logits)
    return graph.apply("cross-entropy-with-logits", vec, target=int(answer_index))


def instance_loss(
    instance: VideoQAInstance,
    model: Model,
    config: TrainConfig,
    rng: np.random.Generator | None,
    graph: Graph,
) -> tuple[int, SelectionResult, ScoreBreakdown]:
    """Score, sample, answer, and return the loss node for one instance."""
    breakdown = score_frames(
        instance.frames, instance.question, model.scorer, graph, model.disabled | config.disabled
    )
    selection = relaxed_topk(breakdown.aggregate_nodes, config.sampler_config(), rng, graph)
    logits = answer_logits(instance, selection.weights_node, config.k, model.generator, graph)
    return answer_loss(logits, instance.answer_index, graph), selection, breakdown


def training_step(
    batch: list[VideoQAInstance],
    model: Model,
    config: TrainConfig,
    rng: np.random.Generator,
) -> StepReport:
    """One mean-loss gradient-descent update over a batch.

    Preconditions are checked before any mutation; gradients of both stores
    are reset, accumulated from a single backward sweep, reported as norms,
    and applied at the configured learning rate.
    """
    if not batch:
        raise ContractError("training-step: empty batch")
    for instance in batch:
        if config.k > instance.frames.num_frames:
            raise ContractError(
                f"training-step: k={config.k} exceeds frame count "
                f"M={instance.frames.num_frames} for video {instance.frames.video_id!r}"
            )
    graph = Graph()
    losses = [instance_loss(inst, model, config, rng, graph)[0] for inst in batch]
    mean_loss = graph.apply("mean", graph.apply("concat", *losses))
    model.zero_grads()
    graph.backward(mean_loss)
    norms = model.gradient_norms()
    for store in model.stores():
        store.sgd_step(config.learning_rate)
    return StepReport(mean_loss=float(graph.value(mean_loss)), grad_norms=norms)


def train(
    instances: list[VideoQAInstance],
    model: Model,
    config: TrainConfig,
) -> list[StepReport]:
    """Epoch loop with seeded shuffling; fully deterministic given the seed."""
    if not instances:
        raise ContractError("train: no instances")
    rng = np.random.default_rng(config.seed)
    reports = []
    for _ in range(config.epochs):
        order = rng.permutation(len(instances))
        for start in range(0, len(order), config.batch_size):
            batch = [instances[i] for i in order[start : start + config.batch_size]]
            reports.append(training_step(batch, model, config, rng))
    return reports


def infer(
    instance: VideoQAInstance,
    model: Model,
    k_prime: int,
) -> InferResult:
    """Deterministic inference: hard top-k' selection, argmax answer.

    Independent of any rng or stochastic flag; ties between equal logits
    resolve toward the lower option index.
    """
    m = instance.frames.num_frames
    if not 1 <= k_prime <= m:
        raise ContractError(f"infer: k'={k_prime} out of range for M={m} frames")
    graph = Graph()
    breakdown = score_frames(
        instance.frames, instance.question, model.scorer, graph, model.disabled
    )
    selection = hard_topk(breakdown.aggregate, k_prime)
    weights_node = graph.constant(selection.relaxed_weights)
    logits = answer_logits(instance, weights_node, k_prime, model.generator, graph)
    values = np.array([float(graph.value(n)) for n in logits])
    return InferResult(
        predicted_index=int(np.argmax(values)),
        selection=selection,
        breakdown=breakdown,
    )
