"""Frame selection from aggregate scores.

Training uses a differentiable relaxation of top-k built from successive
temperature softmaxes with a log mask; the discrete sample underneath is
weighted reservoir sampling realized through Gumbel-perturbed keys.
Inference takes the plain top-k of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph
from .errors import ContractError, DomainError, ShapeError

LOG_MASK_EPS = 1e-12      # floor inside log(1 - a)
UNIFORM_CLAMP = 1e-12     # default clamp for uniform draws before the double log

MODE_TRAIN_STOCHASTIC = "train-stochastic"
MODE_TRAIN_DETERMINISTIC = "train-deterministic"
MODE_INFERENCE = "inference"


@dataclass(frozen=True)
class SamplerConfig:
    k: int
    tau: float = 0.1
    stochastic: bool = True
    gumbel_clamp: float = UNIFORM_CLAMP

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractError(f"SamplerConfig: k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise DomainError(f"SamplerConfig: tau must be positive, got {self.tau}")
        if not 0 < self.gumbel_clamp < 0.5:
            raise DomainError(
                f"SamplerConfig: gumbel_clamp must lie in (0, 0.5), got {self.gumbel_clamp}"
            )


@dataclass(frozen=True)
class SelectionResult:
    """Selected frame indices plus the per-frame relaxed weights.

    ``indices`` are strictly ascending (temporal order). ``relaxed_weights``
    has one entry per frame and total mass k; in inference mode it is the
    exact k-hot indicator. ``weights_node`` addresses the weights on the
    graph when the selection was built differentiably.
    """

    indices: np.ndarray
    relaxed_weights: np.ndarray
    mode: str
    tau: float
    seed: int | None = None
    weights_node: int | None = None

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        weights = np.asarray(self.relaxed_weights, dtype=np.float64)
        if weights.ndim != 1:
            raise ShapeError(f"SelectionResult: weights must be a vector, got {weights.shape}")
        m = weights.shape[0]
        k = idx.shape[0]
        if idx.ndim != 1 or k < 1 or k > m:
            raise ContractError(f"SelectionResult: invalid index count {k} for {m} frames")
        if np.any(idx[:-1] >= idx[1:]) or idx[0] < 0 or idx[-1] >= m:
            raise ContractError("SelectionResult: indices must be strictly ascending in [0, M)")
        if not np.isfinite(weights).all() or np.any(weights < -1e-12):
            raise DomainError("SelectionResult: weights must be finite and non-negative")
        if abs(weights.sum() - k) > 1e-6:
            raise ContractError(
                f"SelectionResult: weights sum {weights.sum():.9f} differs from k={k}"
            )
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "relaxed_weights", weights)

    @property
    def k(self) -> int:
        return int(self.indices.shape[0])


def _check_scores(scores: np.ndarray, op: str) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ShapeError(f"{op}: scores must be a non-empty vector, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise DomainError(f"{op}: scores contain non-finite entries")
    return scores


def _check_k(k: int, m: int, op: str) -> None:
    if k > m:
        raise ContractError(f"{op}: requested k={k} exceeds frame count M={m}")
    if k < 1:
        raise ContractError(f"{op}: k must be >= 1, got {k}")


def selection_probabilities(scores, tau: float) -> np.ndarray:
    """Temperature softmax of the scores, computed with max subtraction."""
    scores = _check_scores(scores, "selection-probabilities")
    if not tau > 0:
        raise DomainError(f"selection-probabilities: tau must be positive, got {tau}")
    z = scores / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def gumbel_keys(scores, tau: float, uniforms: np.ndarray, clamp: float = UNIFORM_CLAMP) -> np.ndarray:
    """Perturbed sort keys ``scores/tau - log(-log u)``.

    ``uniforms`` may carry leading batch dimensions; the trailing axis must
    match the score length. Draws are clamped away from {0, 1} before the
    double log.
    """
    scores = _check_scores(scores, "gumbel-keys")
    if not tau > 0:
        raise DomainError(f"gumbel-keys: tau must be positive, got {tau}")
    u = np.clip(np.asarray(uniforms, dtype=np.float64), clamp, 1.0 - clamp)
    if u.shape[-1] != scores.shape[0]:
        raise ShapeError(
            f"gumbel-keys: uniforms shape {u.shape} does not end in score length {scores.shape[0]}"
        )
    return scores / tau - np.log(-np.log(u))


def _top_k_ascending(keys: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated keys: ties resolve toward the earlier frame
    order = np.argsort(-keys, kind="stable")
    return np.sort(order[:k]).astype(np.int64)


def wrs_indices(
    scores,
    k: int,
    tau: float,
    rng: np.random.Generator,
    clamp: float = UNIFORM_CLAMP,
) -> np.ndarray:
    """Weighted reservoir sample of k frame indices, ascending.

    Keys are Gumbel-perturbed tempered scores; for k=1 the inclusion
    probability is exactly the temperature softmax of the scores. Consumes
    one ``rng.random(M)`` draw.
    """
    scores = _check_scores(scores, "wrs-indices")
    _check_k(k, scores.shape[0], "wrs-indices")
    keys = gumbel_keys(scores, tau, rng.random(scores.shape[0]), clamp)
    return _top_k_ascending(keys, k)


def efraimidis_indices(weights, k: int, uniforms) -> np.ndarray:
    """Classic weighted reservoir sample: top-k of the keys ``u ** (1/w)``.

    The ranking is computed on the log keys ``log(u) / w``, which orders
    identically but never underflows for extreme weights. The oracle twin of
    :func:`wrs_indices`; with shared uniforms and weights ``exp(scores/tau)``
    the two return identical index sets.
    """
    weights = np.asarray(weights, dtype=np.float64)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    if weights.ndim != 1 or weights.shape != uniforms.shape:
        raise ShapeError(
            f"efraimidis-indices: weights shape {weights.shape} and uniforms shape "
            f"{uniforms.shape} must be equal vectors"
        )
    if np.any(weights <= 0) or not np.isfinite(weights).all():
        raise DomainError("efraimidis-indices: weights must be positive and finite")
    if np.any(uniforms <= 0) or np.any(uniforms >= 1):
        raise DomainError("efraimidis-indices: uniforms must lie in (0, 1)")
    _check_k(k, weights.shape[0], "efraimidis-indices")
    keys = np.log(uniforms) / weights
    return _top_k_ascending(keys, k)


def _clip_min(graph: Graph, node: int, floor: float) -> int:
    """max(x, floor) with the exact almost-everywhere derivative.

    Built from pinned primitives: the pass-through mask is computed from the
    current forward value and enters the graph as a constant, so gradient is
    1 where x > floor and 0 where the clamp binds.
    """
    x = graph.value(node)
    mask = (x > floor).astype(np.float64)
    kept = graph.apply("elementwise-multiply", node, graph.constant(mask))
    return graph.apply("add", kept, graph.constant((1.0 - mask) * floor))


def relaxed_topk(
    scores,
    config: SamplerConfig,
    rng: np.random.Generator | None,
    graph: Graph,
    seed: int | None = None,
) -> SelectionResult:
    """Differentiable top-k over per-frame score nodes.

    ``scores`` is a list of scalar nodes (or one vector node). Stochastic
    mode perturbs the tempered scores with Gumbel noise sampled outside the
    graph, so backward treats the noise as fixed. Relaxed weights are the sum
    of k successive softmaxes, each suppressing the mass already claimed via
    a log(1 - a) mask; they converge to the k-hot indicator as tau -> 0.
    Discrete indices are the plain top-k of the keys, reported ascending.
    """
    if isinstance(scores, (list, tuple)):
        vec = graph.apply("concat", *scores)
    else:
        vec = int(scores)
        if graph.value(vec).ndim != 1:
            raise ShapeError(
                f"relaxed-topk: scores node must be a vector, got shape {graph.value(vec).shape}"
            )
    m = graph.value(vec).shape[0]
    _check_k(config.k, m, "relaxed-topk")

    if config.stochastic:
        if rng is None:
            raise ContractError("relaxed-topk: stochastic mode requires an rng")
        # perturb the tempered scores: keys/tau equals the reservoir-sampling
        # keys scores/tau + g, so the discrete sample agrees with wrs_indices
        # under shared draws at every temperature
        uniforms = rng.random(m)
        gumbel = gumbel_keys(np.zeros(m), 1.0, uniforms, config.gumbel_clamp)
        keys = graph.apply("add", vec, graph.constant(config.tau * gumbel))
        ranking = gumbel_keys(graph.value(vec), config.tau, uniforms, config.gumbel_clamp)
        mode = MODE_TRAIN_STOCHASTIC
    else:
        keys = vec
        ranking = graph.value(vec)
        mode = MODE_TRAIN_DETERMINISTIC

    indices = _top_k_ascending(ranking, config.k)

    ones = graph.constant(np.ones(m))
    mask = None
    weights_node = None
    for j in range(config.k):
        logits = keys if mask is None else graph.apply("add", keys, mask)
        a = graph.apply("softmax-with-temperature", logits, tau=config.tau)
        weights_node = a if weights_node is None else graph.apply("add", weights_node, a)
        if j < config.k - 1:
            remaining = _clip_min(graph, graph.apply("subtract", ones, a), LOG_MASK_EPS)
            log_mask = graph.apply("log", remaining)
            mask = log_mask if mask is None else graph.apply("add", mask, log_mask)

    return SelectionResult(
        indices=indices,
        relaxed_weights=graph.value(weights_node).copy(),
        mode=mode,
        tau=config.tau,
        seed=seed,
        weights_node=weights_node,
    )


def hard_topk(scores, k: int) -> SelectionResult:
    """Indices of the k largest scores, ties toward the earlier frame."""
    scores = _check_scores(scores, "hard-topk")
    _check_k(k, scores.shape[0], "hard-topk")
    indices = _top_k_ascending(scores, k)
    weights = np.zeros(scores.shape[0])
    weights[indices] = 1.0
    return SelectionResult(
        indices=indices,
        relaxed_weights=weights,
        mode=MODE_INFERENCE,
        tau=0.0,
        seed=None,
        weights_node=None,
    )
