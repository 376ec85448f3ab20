"""Synthetic VideoQA benchmark with planted keyframes and an adversarial
redundancy cluster, plus selection metrics and the ablation harness.

Each video hides the answer signal in a few planted frames (question
direction + correct-option direction + noise). A cluster of near-copies of
one question-aligned frame carries no answer signal: similarity-only
selectors rank it highly, distinctiveness demotes it. Remaining frames are
unit noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph
from .errors import ContractError, DomainError
from .pipeline import (
    GeneratorParams,
    Model,
    TrainConfig,
    VideoQAInstance,
    answer_logits,
    answer_loss,
    infer,
    train,
)
from .sampler import MODE_INFERENCE, SelectionResult
from .scoring import FrameSet, ModelDims, QuestionEmbedding, pairwise_similarity

ABLATION_VARIANTS = ("full", "no_qfs", "no_qfm", "no_ifd", "uniform", "random")

_VARIANT_MASKS = {
    "full": frozenset(),
    "no_qfs": frozenset({"qfs"}),
    "no_qfm": frozenset({"qfm"}),
    "no_ifd": frozenset({"ifd"}),
}


@dataclass(frozen=True)
class BenchConfig:
    videos: int = 60
    frames_per_video: int = 32
    options: int = 5
    planted: int = 3
    redundancy_cluster_size: int = 6
    noise_sigma: float = 0.05
    seed: int = 0
    dims: ModelDims = ModelDims()
    answer_strength: float = 1.0   # weight of the correct-option direction in planted frames
    scene_strength: float = 1.0    # weight of each planted frame's own scene direction
    # every second planted frame scales its question direction by this factor;
    # below 1 it becomes a "context" frame that carries the answer but is
    # barely question-aligned, so similarity alone cannot surface it
    context_question_scale: float = 1.0
    # context frames additionally carry a dataset-wide relevance signature
    # with a random sign per frame; the sign symmetry makes it invisible to
    # a linear cosine but learnable by the matching perceptron
    tag_strength: float = 0.0
    # multiplies the cluster anchor's question alignment; above 1 the cluster
    # outranks planted frames under pure similarity scoring
    cluster_question_boost: float = 1.0
    # scales the answer component of question-aligned planted frames; below 1
    # the answer lives mostly in the context frames, so selectors that cannot
    # surface them cannot drive the loss down
    aligned_answer_scale: float = 1.0
    # noise frames share this much of a per-video background direction, like
    # frames of one clip sharing global statistics; raises their mutual
    # similarity so distinctiveness favors the planted frames
    noise_common_strength: float = 0.0

    def __post_init__(self) -> None:
        if self.videos < 1:
            raise ContractError("BenchConfig: need at least one video")
        if self.options < 2:
            raise ContractError("BenchConfig: need at least two options")
        if self.planted < 1 or self.planted >= self.frames_per_video:
            raise ContractError(
                f"BenchConfig: planted={self.planted} must satisfy 1 <= r < M={self.frames_per_video}"
            )
        if self.redundancy_cluster_size < 0:
            raise ContractError("BenchConfig: cluster size must be >= 0")
        if self.planted + self.redundancy_cluster_size > self.frames_per_video:
            raise ContractError(
                "BenchConfig: planted + cluster frames exceed the frame count"
            )
        if self.noise_sigma < 0:
            raise DomainError("BenchConfig: noise_sigma must be >= 0")
        if self.dims.d_v < self.dims.d_t:
            raise ContractError("BenchConfig: requires d_v >= d_t for the text-to-visual basis")
        if self.options + 3 + self.planted > self.dims.d_t:
            raise ContractError(
                "BenchConfig: text basis too small for options, question, cluster,"
                " and scene directions"
            )


@dataclass(frozen=True)
class BenchMetrics:
    keyframe_recall: float
    answer_accuracy: float
    redundancy: float
    instances: int = 0


@dataclass
class SyntheticDataset:
    instances: list[VideoQAInstance]
    text_to_visual: np.ndarray    # (d_v, d_t), orthonormal columns
    text_basis: np.ndarray        # (d_t, d_t), vocabulary of question/option directions
    config: BenchConfig

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(repr(self.config).encode())
        digest.update(self.text_to_visual.tobytes())
        digest.update(self.text_basis.tobytes())
        for inst in self.instances:
            digest.update(inst.frames.embeddings.tobytes())
            digest.update(inst.question.vector.tobytes())
            digest.update(inst.options.tobytes())
            digest.update(np.int64(inst.answer_index).tobytes())
            digest.update(np.asarray(inst.planted_keyframes, dtype=np.int64).tobytes())
        return digest.hexdigest()


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_dataset(config: BenchConfig) -> SyntheticDataset:
    """Deterministic synthetic instances; equal seeds give equal bytes.

    Questions and options are drawn from a fixed random orthonormal basis of
    the text space; the option pool for an instance never contains the
    question's own direction, so question-aligned distractor frames can never
    leak the answer.
    """
    rng = np.random.default_rng(config.seed)
    d = config.dims
    basis, _ = np.linalg.qr(rng.standard_normal((d.d_v, d.d_t)))
    text_basis, _ = np.linalg.qr(rng.standard_normal((d.d_t, d.d_t)))
    tag_dir = _unit(rng.standard_normal(d.d_v))
    m = config.frames_per_video
    instances = []
    for v in range(config.videos):
        # question, options, the cluster's filler directions, and the planted
        # frames' scene directions are all distinct text-basis vectors, so
        # structured frames differ only in geometry, never in subspace
        roles = rng.choice(d.d_t, size=3 + config.options + config.planted, replace=False)
        q_index = int(roles[0])
        fake_answer = int(roles[1])
        fake_scene = int(roles[2])
        option_idx = roles[3 : 3 + config.options]
        scene_idx = roles[3 + config.options :]
        question = text_basis[:, q_index]
        options = text_basis[:, option_idx].T.copy()
        answer = int(rng.integers(config.options))
        layout = rng.permutation(m)
        planted_pos = np.sort(layout[: config.planted])
        cluster_pos = layout[config.planted : config.planted + config.redundancy_cluster_size]

        question_dir = basis @ question
        answer_dir = basis @ options[answer]
        # the anchor is as question-aligned as a planted frame but carries a
        # fake, non-option answer direction and no relevance signature; its
        # near-copies trap similarity-led selection, and only distinctiveness
        # separates them from real keyframes
        cluster_anchor = _unit(
            config.cluster_question_boost * question_dir
            + config.answer_strength * (basis @ text_basis[:, fake_answer])
            + config.scene_strength * (basis @ text_basis[:, fake_scene])
        )

        frames = np.empty((m, d.d_v))
        background = config.noise_common_strength * _unit(rng.standard_normal(d.d_v))
        for i in range(m):
            frames[i] = _unit(background + rng.standard_normal(d.d_v) / np.sqrt(d.d_v))
        for j, (pos, scene_col) in enumerate(zip(planted_pos, scene_idx)):
            aligned = j % 2 == 0
            question_weight = 1.0 if aligned else config.context_question_scale
            answer_weight = config.answer_strength * (
                config.aligned_answer_scale if aligned else 1.0
            )
            scene = config.scene_strength * basis @ text_basis[:, int(scene_col)]
            sign = float(rng.choice([-1.0, 1.0]))
            tag = config.tag_strength * sign * tag_dir
            jitter = config.noise_sigma * _unit(rng.standard_normal(d.d_v))
            frames[pos] = _unit(
                question_weight * question_dir
                + answer_weight * answer_dir
                + scene
                + tag
                + jitter
            )
        for i in cluster_pos:
            jitter = config.noise_sigma * _unit(rng.standard_normal(d.d_v))
            frames[i] = _unit(cluster_anchor + jitter)

        instances.append(
            VideoQAInstance(
                frames=FrameSet(frames, video_id=f"video-{v:04d}"),
                question=QuestionEmbedding(question, question_id=f"question-{v:04d}"),
                options=options,
                answer_index=answer,
                planted_keyframes=tuple(int(i) for i in planted_pos),
            )
        )
    return SyntheticDataset(
        instances=instances, text_to_visual=basis, text_basis=text_basis, config=config
    )


def split_dataset(
    dataset: SyntheticDataset, eval_fraction: float = 0.25
) -> tuple[list[VideoQAInstance], list[VideoQAInstance]]:
    """Deterministic train/held-out split by trailing index."""
    n = len(dataset.instances)
    n_eval = min(n - 1, max(1, round(n * eval_fraction)))
    return dataset.instances[: n - n_eval], dataset.instances[n - n_eval :]


def oracle_readout_accuracy(dataset: SyntheticDataset) -> float:
    """Answer accuracy of reading the mean planted frame against the options
    through the dataset's own text-to-visual basis. A construction check:
    the correct answer must be recoverable from planted frames alone."""
    correct = 0
    for inst in dataset.instances:
        mean_planted = inst.frames.embeddings[list(inst.planted_keyframes)].mean(axis=0)
        scores = inst.options @ dataset.text_to_visual.T @ mean_planted
        correct += int(np.argmax(scores)) == inst.answer_index
    return correct / len(dataset.instances)


def selection_redundancy(frames: FrameSet, indices: np.ndarray) -> float:
    """Mean pairwise similarity among the selected frames (0 for one frame)."""
    if len(indices) < 2:
        return 0.0
    sub = FrameSet(frames.embeddings[np.asarray(indices)], video_id=frames.video_id)
    sim = pairwise_similarity(sub)
    off = sim[~np.eye(len(indices), dtype=bool)]
    return float(off.mean())


def _recall(selected: np.ndarray, planted: tuple[int, ...] | None) -> float | None:
    if not planted:
        return None
    return len(set(int(i) for i in selected) & set(planted)) / len(planted)


def evaluate(model: Model, instances: list[VideoQAInstance], k_prime: int) -> BenchMetrics:
    """Deterministic metrics over a list of instances at inference width k'."""
    recalls, redundancies = [], []
    correct = 0
    for inst in instances:
        result = infer(inst, model, k_prime)
        correct += result.predicted_index == inst.answer_index
        recall = _recall(result.selection.indices, inst.planted_keyframes)
        if recall is not None:
            recalls.append(recall)
        redundancies.append(selection_redundancy(inst.frames, result.selection.indices))
    n = len(instances)
    return BenchMetrics(
        keyframe_recall=float(np.mean(recalls)) if recalls else 0.0,
        answer_accuracy=correct / n,
        redundancy=float(np.mean(redundancies)),
        instances=n,
    )


# ---------------------------------------------------------------------------
# fixed-selection baselines (uniform spacing / seeded random draw)

def uniform_indices(m: int, k: int) -> np.ndarray:
    """k evenly spaced frame indices over [0, M)."""
    if not 1 <= k <= m:
        raise ContractError(f"uniform-indices: k={k} out of range for M={m}")
    return (np.arange(k) * m // k).astype(np.int64)


def random_indices(m: int, k: int, seed: int, instance_index: int) -> np.ndarray:
    """Seeded uniform-without-replacement draw, stable per instance."""
    if not 1 <= k <= m:
        raise ContractError(f"random-indices: k={k} out of range for M={m}")
    rng = np.random.default_rng([seed, instance_index])
    return np.sort(rng.choice(m, size=k, replace=False)).astype(np.int64)


def _fixed_indices(
    rule: str, m: int, k: int, seed: int, instance_index: int
) -> np.ndarray:
    if rule == "uniform":
        return uniform_indices(m, k)
    if rule == "random":
        return random_indices(m, k, seed, instance_index)
    raise ContractError(f"unknown baseline rule {rule!r}")


def _khot(m: int, indices: np.ndarray) -> np.ndarray:
    weights = np.zeros(m)
    weights[indices] = 1.0
    return weights


def _fixed_predict(
    instance: VideoQAInstance, generator: GeneratorParams, indices: np.ndarray, mass: int
) -> int:
    graph = Graph()
    weights_node = graph.constant(_khot(instance.frames.num_frames, indices))
    logits = answer_logits(instance, weights_node, mass, generator, graph)
    return int(np.argmax([float(graph.value(n)) for n in logits]))


def _train_fixed_selector(
    instances: list[VideoQAInstance], model: Model, config: TrainConfig, rule: str
) -> None:
    """Generator-only training with the baseline's fixed frame selection."""
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(instances))
        for start in range(0, len(order), config.batch_size):
            graph = Graph()
            losses = []
            for idx in order[start : start + config.batch_size]:
                inst = instances[idx]
                m = inst.frames.num_frames
                if rule == "random":
                    indices = np.sort(rng.choice(m, size=config.k, replace=False))
                else:
                    indices = uniform_indices(m, config.k)
                weights_node = graph.constant(_khot(m, indices))
                logits = answer_logits(inst, weights_node, config.k, model.generator, graph)
                losses.append(answer_loss(logits, inst.answer_index, graph))
            mean_loss = graph.apply("mean", graph.apply("concat", *losses))
            model.zero_grads()
            graph.backward(mean_loss)
            model.generator.store.sgd_step(config.learning_rate)


def _evaluate_fixed(
    model: Model,
    instances: list[VideoQAInstance],
    k_prime: int,
    rule: str,
    seed: int,
) -> BenchMetrics:
    recalls, redundancies = [], []
    correct = 0
    for idx, inst in enumerate(instances):
        m = inst.frames.num_frames
        indices = _fixed_indices(rule, m, k_prime, seed, idx)
        correct += _fixed_predict(inst, model.generator, indices, k_prime) == inst.answer_index
        recall = _recall(indices, inst.planted_keyframes)
        if recall is not None:
            recalls.append(recall)
        redundancies.append(selection_redundancy(inst.frames, indices))
    n = len(instances)
    return BenchMetrics(
        keyframe_recall=float(np.mean(recalls)) if recalls else 0.0,
        answer_accuracy=correct / n,
        redundancy=float(np.mean(redundancies)),
        instances=n,
    )


# ---------------------------------------------------------------------------
# ablation harness

@dataclass(frozen=True)
class AblationResult:
    mean: dict[str, BenchMetrics]
    per_seed: dict[str, list[BenchMetrics]] = field(repr=False)
    seeds: tuple[int, ...] = ()
    k_prime: int = 0
    dataset_hashes: tuple[str, ...] = ()

    def rows(self) -> list[dict]:
        out = []
        for variant in ABLATION_VARIANTS:
            metrics = self.mean[variant]
            out.append(
                {
                    "variant": variant,
                    "keyframe_recall": metrics.keyframe_recall,
                    "answer_accuracy": metrics.answer_accuracy,
                    "redundancy": metrics.redundancy,
                    "seeds": list(self.seeds),
                    "k_prime": self.k_prime,
                }
            )
        return out

    def format_table(self) -> str:
        lines = [
            f"{'variant':<10} {'recall':>8} {'accuracy':>9} {'redundancy':>11}",
            "-" * 41,
        ]
        for variant in ABLATION_VARIANTS:
            metrics = self.mean[variant]
            lines.append(
                f"{variant:<10} {metrics.keyframe_recall:>8.3f} "
                f"{metrics.answer_accuracy:>9.3f} {metrics.redundancy:>11.3f}"
            )
        return "\n".join(lines)


def _mean_metrics(metrics: list[BenchMetrics]) -> BenchMetrics:
    return BenchMetrics(
        keyframe_recall=float(np.mean([m.keyframe_recall for m in metrics])),
        answer_accuracy=float(np.mean([m.answer_accuracy for m in metrics])),
        redundancy=float(np.mean([m.redundancy for m in metrics])),
        instances=sum(m.instances for m in metrics),
    )


def run_ablation(
    config: BenchConfig,
    train_config: TrainConfig,
    seeds: tuple[int, ...] = (1, 2, 3),
    k_prime: int | None = None,
    eval_fraction: float = 0.25,
) -> AblationResult:
    """Train every variant on identical per-seed data and compare metrics.

    Scored variants train end to end under their ablation mask; the uniform
    and random baselines train the generator only, over their fixed frame
    selections. Dataset hashes are asserted equal across variants per seed.
    """
    if not seeds:
        raise ContractError("run-ablation: need at least one seed")
    k_prime = train_config.k if k_prime is None else k_prime
    per_seed: dict[str, list[BenchMetrics]] = {v: [] for v in ABLATION_VARIANTS}
    hashes = []
    for seed in seeds:
        seed_config = replace(config, seed=seed)
        reference_hash = generate_dataset(seed_config).content_hash()
        hashes.append(reference_hash)
        for variant in ABLATION_VARIANTS:
            dataset = generate_dataset(seed_config)
            if dataset.content_hash() != reference_hash:
                raise ContractError(
                    f"run-ablation: variant {variant!r} saw a different dataset for seed {seed}"
                )
            train_set, eval_set = split_dataset(dataset, eval_fraction)
            if variant in _VARIANT_MASKS:
                mask = _VARIANT_MASKS[variant]
                model = Model.create(config.dims, seed=seed, disabled=mask)
                cfg = replace(train_config, seed=seed, disabled=mask)
                train(train_set, model, cfg)
                per_seed[variant].append(evaluate(model, eval_set, k_prime))
            else:
                model = Model.create(config.dims, seed=seed)
                cfg = replace(train_config, seed=seed)
                _train_fixed_selector(train_set, model, cfg, variant)
                per_seed[variant].append(
                    _evaluate_fixed(model, eval_set, k_prime, variant, seed)
                )
    return AblationResult(
        mean={v: _mean_metrics(per_seed[v]) for v in ABLATION_VARIANTS},
        per_seed=per_seed,
        seeds=tuple(seeds),
        k_prime=k_prime,
        dataset_hashes=tuple(hashes),
    )
