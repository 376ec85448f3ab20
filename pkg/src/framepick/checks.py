"""Canned finite-difference gradient checks for the scorer and the full
pipeline, shared by the command line and the acceptance suite.

All checks run at toy dimensions so every parameter coordinate can be
perturbed quickly; Gumbel noise is frozen by reseeding inside the builders.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, GradCheckReport, grad_check
from .pipeline import Model, TrainConfig, VideoQAInstance, instance_loss
from .sampler import SamplerConfig, relaxed_topk
from .scoring import FrameSet, ModelDims, QuestionEmbedding, qfm_scores, qfs_scores

CHECK_DIMS = ModelDims(d_v=6, d_t=4, d_h=5, d_p=3)
CHECK_NAMES = ("qfs", "qfm", "pipeline")


def _fixture(seed: int) -> tuple[Model, VideoQAInstance]:
    rng = np.random.default_rng(seed)
    model = Model.create(CHECK_DIMS, seed=seed)
    frames = FrameSet(rng.standard_normal((5, CHECK_DIMS.d_v)), video_id="check")
    question = QuestionEmbedding(rng.standard_normal(CHECK_DIMS.d_t), question_id="check")
    options = rng.standard_normal((3, CHECK_DIMS.d_t))
    instance = VideoQAInstance(
        frames=frames, question=question, options=options, answer_index=1
    )
    return model, instance


def _sum_nodes(graph: Graph, nodes: list[int]) -> int:
    return graph.apply("sum", graph.apply("concat", *nodes))


def run_check(name: str, seed: int = 0, step: float = 1e-6, tolerance: float = 1e-4) -> GradCheckReport:
    """One named check: 'qfs', 'qfm', or 'pipeline'."""
    model, instance = _fixture(seed)

    if name == "qfs":
        def build():
            graph = Graph()
            nodes = qfs_scores(instance.frames, instance.question, model.scorer, graph)
            return graph, _sum_nodes(graph, nodes)
    elif name == "qfm":
        def build():
            graph = Graph()
            nodes = qfm_scores(instance.frames, instance.question, model.scorer, graph)
            return graph, _sum_nodes(graph, nodes)
    elif name == "pipeline":
        config = TrainConfig(k=2, tau=0.7, stochastic=True, learning_rate=0.0, seed=seed)

        def build():
            graph = Graph()
            noise_rng = np.random.default_rng(seed + 1)  # frozen across rebuilds
            loss, _, _ = instance_loss(instance, model, config, noise_rng, graph)
            return graph, loss
    else:
        raise ValueError(f"unknown gradient check {name!r}")

    return grad_check(build, model.scorer.store, step=step, tolerance=tolerance)


def run_all(seed: int = 0, step: float = 1e-6, tolerance: float = 1e-4) -> dict[str, GradCheckReport]:
    return {name: run_check(name, seed=seed, step=step, tolerance=tolerance) for name in CHECK_NAMES}


def relaxed_weight_gradient_report(seed: int = 0, step: float = 1e-6, tolerance: float = 1e-4) -> GradCheckReport:
    """FD check of d(sum c_i * w_i)/d(scores) through the relaxed sampler,
    with the scores held as a store parameter and noise frozen."""
    from .autodiff import ParameterStore

    rng = np.random.default_rng(seed)
    store = ParameterStore()
    store.add("scores", rng.standard_normal(6))
    coeffs = rng.standard_normal(6)
    config = SamplerConfig(k=3, tau=0.7, stochastic=True)

    def build():
        graph = Graph()
        scores = graph.parameter(store, "scores")
        noise_rng = np.random.default_rng(seed + 99)
        selection = relaxed_topk(scores, config, noise_rng, graph)
        root = graph.apply("dot", selection.weights_node, graph.constant(coeffs))
        return graph, root

    return grad_check(build, store, step=step, tolerance=tolerance)
