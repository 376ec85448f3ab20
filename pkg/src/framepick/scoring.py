"""Per-frame scoring: question-frame similarity, question-frame matching,
and inter-frame distinctiveness, plus their raw aggregate.

All question-dependent scores are built as graph nodes so gradients flow
from downstream losses into the scorer parameters. Distinctiveness depends
only on the (constant) frame embeddings; it is computed numerically and
carried on the graph as constant nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ParameterStore
from .errors import ContractError, DomainError, ShapeError

MECHANISMS = ("qfs", "qfm", "ifd")

MIN_ROW_NORM = 1e-9


@dataclass(frozen=True)
class ModelDims:
    """Embedding and projection sizes. Defaults are desk-scale."""

    d_v: int = 64   # frame embedding
    d_t: int = 32   # question / option embedding
    d_h: int = 64   # hidden width of the extractor maps
    d_p: int = 32   # projection width used by the similarity score

    def __post_init__(self) -> None:
        for name in ("d_v", "d_t", "d_h", "d_p"):
            if getattr(self, name) < 1:
                raise ContractError(f"ModelDims.{name} must be >= 1")


@dataclass(frozen=True)
class FrameSet:
    """Per-frame visual embeddings for one video, rows in temporal order."""

    embeddings: np.ndarray  # (M, d_v) float64
    video_id: str = ""

    def __post_init__(self) -> None:
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ShapeError(f"FrameSet: expected a non-empty matrix, got shape {emb.shape}")
        if not np.isfinite(emb).all():
            raise DomainError(f"FrameSet {self.video_id!r}: non-finite embedding entries")
        norms = np.linalg.norm(emb, axis=1)
        bad = np.nonzero(norms <= MIN_ROW_NORM)[0]
        if bad.size:
            raise DomainError(
                f"FrameSet {self.video_id!r}: degenerate zero frame at row {int(bad[0])}"
            )
        object.__setattr__(self, "embeddings", emb)

    @property
    def num_frames(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class QuestionEmbedding:
    vector: np.ndarray  # (d_t,) float64
    question_id: str = ""

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ShapeError(f"QuestionEmbedding: expected a vector, got shape {vec.shape}")
        if not np.isfinite(vec).all():
            raise DomainError(f"QuestionEmbedding {self.question_id!r}: non-finite entries")
        if np.linalg.norm(vec) <= MIN_ROW_NORM:
            raise DomainError(f"QuestionEmbedding {self.question_id!r}: zero vector")
        object.__setattr__(self, "vector", vec)


# tensor name -> shape, given dims; affine maps fold their bias as a
# trailing column applied to ones-augmented inputs
_SCORER_SHAPES = {
    "frame_extractor": lambda d: (d.d_h, d.d_v + 1),
    "question_extractor": lambda d: (d.d_h, d.d_t + 1),
    "we": lambda d: (d.d_p, d.d_h),
    "wq": lambda d: (d.d_p, d.d_h),
    "fusion_hidden": lambda d: (d.d_h, 3 * d.d_h + 1),
    "fusion_out": lambda d: (d.d_h + 1,),
}


def init_affine(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Gaussian weights scaled by fan-in, zero bias in the trailing column."""
    value = rng.standard_normal(shape) / np.sqrt(shape[-1] - 1)
    if len(shape) == 2:
        value[:, -1] = 0.0
    else:
        value[-1] = 0.0
    return value


@dataclass(frozen=True)
class ScorerParams:
    """View over the named scorer tensors inside a ParameterStore.

    Holds the frame/question extractor affine maps, the pair of similarity
    projections, and the two-layer fusion perceptron behind the matching
    score.
    """

    dims: ModelDims
    store: ParameterStore
    prefix: str = "scorer."

    @classmethod
    def initialize(
        cls,
        store: ParameterStore,
        dims: ModelDims,
        rng: np.random.Generator,
        prefix: str = "scorer.",
    ) -> "ScorerParams":
        for name, shape_fn in _SCORER_SHAPES.items():
            shape = shape_fn(dims)
            if name in ("we", "wq"):
                store.add(prefix + name, rng.standard_normal(shape) / np.sqrt(shape[-1]))
            elif name == "fusion_hidden":
                # seed the matching head to read the frame-question inner
                # product through its u*v block, so the matching score is
                # informative before any training refines it
                d_h = dims.d_h
                signs = rng.choice([-1.0, 1.0], size=d_h)
                value = rng.standard_normal(shape) * (0.05 / np.sqrt(shape[-1] - 1))
                value[:, -1] = 0.0
                value[:, 2 * d_h : 3 * d_h] += 0.3 * signs[:, None]
                store.add(prefix + name, value)
                store.add(
                    prefix + "fusion_out",
                    np.concatenate([(1.2 / d_h) * signs, [0.0]]),
                )
            elif name == "fusion_out":
                continue  # written together with fusion_hidden
            else:
                store.add(prefix + name, init_affine(rng, shape))
        return cls(dims=dims, store=store, prefix=prefix)

    def node(self, graph: Graph, name: str) -> int:
        return graph.parameter(self.store, self.prefix + name)


def augment_ones_row(matrix: np.ndarray) -> np.ndarray:
    """Column-major inputs with an appended ones row, for folded-bias affines."""
    return np.vstack([matrix.T, np.ones(matrix.shape[0])])


def _frame_feature_columns(graph: Graph, params: ScorerParams, frames: FrameSet) -> int:
    """tanh(extractor @ [frames; 1]) as one (d_h, M) matrix node."""
    augmented = graph.constant(augment_ones_row(frames.embeddings))
    linear = graph.apply(
        "matrix-matrix-product", params.node(graph, "frame_extractor"), augmented
    )
    return graph.apply("tanh", linear)


def _column(graph: Graph, matrix_node: int, index: int, length: int) -> int:
    basis = np.zeros(length)
    basis[index] = 1.0
    return graph.apply("matrix-vector-product", matrix_node, graph.constant(basis))


def _question_feature(graph: Graph, params: ScorerParams, question: QuestionEmbedding) -> int:
    q = graph.constant(np.concatenate([question.vector, [1.0]]))
    return graph.apply(
        "tanh",
        graph.apply("matrix-vector-product", params.node(graph, "question_extractor"), q),
    )


def _qfs_from_features(
    graph: Graph, params: ScorerParams, frame_features: int, question_feature: int, m: int
) -> list[int]:
    projected = graph.apply("matrix-matrix-product", params.node(graph, "we"), frame_features)
    wq_hq = graph.apply(
        "matrix-vector-product", params.node(graph, "wq"), question_feature
    )
    return [
        graph.apply("cosine-similarity", _column(graph, projected, i, m), wq_hq)
        for i in range(m)
    ]


def _qfm_from_features(
    graph: Graph, params: ScorerParams, frame_features: int, question_feature: int, m: int
) -> list[int]:
    hidden_w = params.node(graph, "fusion_hidden")
    out_w = params.node(graph, "fusion_out")
    one = graph.constant(1.0)
    scores = []
    for i in range(m):
        u = _column(graph, frame_features, i, m)
        fused = graph.apply(
            "concat", u, question_feature,
            graph.apply("elementwise-multiply", u, question_feature), one,
        )
        hidden = graph.apply("tanh", graph.apply("matrix-vector-product", hidden_w, fused))
        logit = graph.apply("dot", out_w, graph.apply("concat", hidden, one))
        scores.append(graph.apply("sigmoid", logit))
    return scores


def qfs_scores(
    frames: FrameSet,
    question: QuestionEmbedding,
    params: ScorerParams,
    graph: Graph,
) -> list[int]:
    """Cosine similarity between projected frame and question features.

    One scalar node per frame, each in [-1, 1], differentiable with respect
    to the extractor and projection parameters.
    """
    features = _frame_feature_columns(graph, params, frames)
    hq = _question_feature(graph, params, question)
    return _qfs_from_features(graph, params, features, hq, frames.num_frames)


def qfm_scores(
    frames: FrameSet,
    question: QuestionEmbedding,
    params: ScorerParams,
    graph: Graph,
) -> list[int]:
    """Sigmoid-bounded matching score from the fused frame-question features.

    The fusion input is concat(u, v, u*v) over the extracted frame feature u
    and question feature v; a two-layer perceptron reduces it to one logit.
    """
    features = _frame_feature_columns(graph, params, frames)
    hq = _question_feature(graph, params, question)
    return _qfm_from_features(graph, params, features, hq, frames.num_frames)


def pairwise_similarity(frames: FrameSet) -> np.ndarray:
    """Cosine similarity between every pair of row-normalized frames.

    Symmetric, unit diagonal, entries clipped to [-1, 1].
    """
    emb = frames.embeddings
    rows = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sim = rows @ rows.T
    sim = (sim + sim.T) / 2.0
    sim = np.clip(sim, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def ifd_values(frames: FrameSet) -> np.ndarray:
    """Average (1 - cosine) distance of each frame to all other frames.

    A single frame has no peers; its distinctiveness is defined as 0.
    """
    m = frames.num_frames
    if m == 1:
        return np.zeros(1)
    dist = 1.0 - pairwise_similarity(frames)
    np.fill_diagonal(dist, 0.0)
    return dist.sum(axis=1) / (m - 1)


def ifd_scores(frames: FrameSet, graph: Graph) -> list[int]:
    """Distinctiveness values carried on the graph as constant nodes."""
    return [graph.constant(v) for v in ifd_values(frames)]


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-frame scores for one (video, question) pair.

    Numeric vectors are snapshots; the ``*_nodes`` lists address the same
    quantities on the graph. Mechanisms disabled by an ablation mask appear
    as exact zeros and contribute no gradient.
    """

    qfs: np.ndarray
    qfm: np.ndarray
    ifd: np.ndarray
    aggregate: np.ndarray
    qfs_nodes: list[int] = field(repr=False, default_factory=list)
    qfm_nodes: list[int] = field(repr=False, default_factory=list)
    ifd_nodes: list[int] = field(repr=False, default_factory=list)
    aggregate_nodes: list[int] = field(repr=False, default_factory=list)


def aggregate_scores(
    qfs_nodes: list[int],
    qfm_nodes: list[int],
    ifd_nodes: list[int],
    graph: Graph,
) -> list[int]:
    """Raw unnormalized per-frame sum of the three mechanism scores."""
    if not (len(qfs_nodes) == len(qfm_nodes) == len(ifd_nodes)):
        raise ShapeError(
            "aggregate-scores: score vectors have lengths "
            f"{len(qfs_nodes)}, {len(qfm_nodes)}, {len(ifd_nodes)}"
        )
    return [
        graph.apply("add", graph.apply("add", a, b), c)
        for a, b, c in zip(qfs_nodes, qfm_nodes, ifd_nodes)
    ]


def score_frames(
    frames: FrameSet,
    question: QuestionEmbedding,
    params: ScorerParams,
    graph: Graph,
    disabled: frozenset[str] = frozenset(),
) -> ScoreBreakdown:
    """Compute the full per-frame breakdown, honoring an ablation mask.

    ``disabled`` names mechanisms to switch off ("qfs", "qfm", "ifd");
    disabling all three is a contract error.
    """
    unknown = set(disabled) - set(MECHANISMS)
    if unknown:
        raise ContractError(f"unknown mechanisms in ablation mask: {sorted(unknown)}")
    if set(disabled) >= set(MECHANISMS):
        raise ContractError("empty scorer: all scoring mechanisms are disabled")

    m = frames.num_frames
    zero = None

    def zeros() -> list[int]:
        nonlocal zero
        if zero is None:
            zero = graph.constant(0.0)
        return [zero] * m

    need_features = not {"qfs", "qfm"} <= set(disabled)
    if need_features:
        features = _frame_feature_columns(graph, params, frames)
        hq = _question_feature(graph, params, question)
    qfs_nodes = (
        zeros() if "qfs" in disabled else _qfs_from_features(graph, params, features, hq, m)
    )
    qfm_nodes = (
        zeros() if "qfm" in disabled else _qfm_from_features(graph, params, features, hq, m)
    )
    ifd_nodes = zeros() if "ifd" in disabled else ifd_scores(frames, graph)
    agg_nodes = aggregate_scores(qfs_nodes, qfm_nodes, ifd_nodes, graph)

    def pull(nodes: list[int]) -> np.ndarray:
        return np.array([float(graph.value(n)) for n in nodes])

    return ScoreBreakdown(
        qfs=pull(qfs_nodes),
        qfm=pull(qfm_nodes),
        ifd=pull(ifd_nodes),
        aggregate=pull(agg_nodes),
        qfs_nodes=qfs_nodes,
        qfm_nodes=qfm_nodes,
        ifd_nodes=ifd_nodes,
        aggregate_nodes=agg_nodes,
    )
