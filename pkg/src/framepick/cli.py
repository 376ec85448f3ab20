"""Command-line surface: gen, train, select, eval, ablate, gradcheck.

Data goes to the stream or file named by --out as line-delimited JSON;
errors go to stderr as one JSON line and a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, fileio
from .autodiff import Graph
from .checks import CHECK_NAMES, run_check
from .errors import EvaluationError
from .pipeline import Model, TrainConfig, train
from .sampler import SamplerConfig, hard_topk, relaxed_topk
from .scoring import MECHANISMS, ModelDims, score_frames


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one machine-parsable line instead of usage spam
        raise CliError(message)


def _parse_ablate(text: str | None) -> frozenset[str]:
    if not text:
        return frozenset()
    names = frozenset(part.strip().lower() for part in text.split(",") if part.strip())
    unknown = names - set(MECHANISMS)
    if unknown:
        raise CliError(f"--ablate: unknown mechanisms {sorted(unknown)}")
    return names


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise CliError(f"--seeds: {exc}") from exc


def _open_out(path: str | None):
    if path is None:
        return sys.stdout, False
    return open(path, "w"), True


def _emit(handle, payload: dict) -> None:
    handle.write(json.dumps(payload) + "\n")


def _add_common(parser: argparse.ArgumentParser, *, epochs_default=20) -> None:
    parser.add_argument("--k", type=int, default=8, help="frames selected in training")
    parser.add_argument("--tau", type=float, default=0.1, help="sampling temperature")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=epochs_default)
    parser.add_argument("--lr", type=float, default=0.5, help="learning rate")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--ablate", type=str, default=None, help="comma list of qfs,qfm,ifd")
    parser.add_argument("--deterministic", action="store_true", help="disable Gumbel noise")


def build_parser() -> _Parser:
    parser = _Parser(prog="framepick", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--videos", type=int, default=60)
    gen.add_argument("--frames", type=int, default=32)
    gen.add_argument("--options", type=int, default=5)
    gen.add_argument("--planted", type=int, default=3)
    gen.add_argument("--cluster", type=int, default=6)
    gen.add_argument("--noise-sigma", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train a model on a manifest")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True, help="snapshot directory")
    _add_common(tr)

    sel = sub.add_parser("select", help="score and select frames per instance")
    sel.add_argument("--manifest")
    sel.add_argument("--snapshot", help="model snapshot directory (default: fresh seeded model)")
    sel.add_argument("--out")
    sel.add_argument("--scores", help="comma list of scores; select directly, no model")
    _add_common(sel)

    ev = sub.add_parser("eval", help="evaluate a snapshot on a manifest")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--snapshot", required=True)
    ev.add_argument("--out")
    ev.add_argument("--k", type=int, default=8)
    ev.add_argument("--k-prime", type=int, default=None, help="inference width (default: k)")

    ab = sub.add_parser("ablate", help="run the paired ablation study")
    ab.add_argument("--out")
    ab.add_argument("--videos", type=int, default=60)
    ab.add_argument("--frames", type=int, default=32)
    ab.add_argument("--options", type=int, default=5)
    ab.add_argument("--planted", type=int, default=3)
    ab.add_argument("--cluster", type=int, default=10)
    ab.add_argument("--noise-sigma", type=float, default=0.05)
    ab.add_argument("--seeds", type=str, default="1,2,3")
    ab.add_argument("--k-prime", type=int, default=None)
    _add_common(ab)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--step", type=float, default=1e-6)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--out")
    return parser


def _cmd_gen(args) -> int:
    config = bench.BenchConfig(
        videos=args.videos,
        frames_per_video=args.frames,
        options=args.options,
        planted=args.planted,
        redundancy_cluster_size=args.cluster,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    dataset = bench.generate_dataset(config)
    manifest_path = fileio.write_dataset(dataset.instances, config.dims, args.out)
    _emit(sys.stdout, {"manifest": str(manifest_path), "instances": len(dataset.instances)})
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        k=args.k,
        tau=args.tau,
        stochastic=not args.deterministic,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        disabled=_parse_ablate(args.ablate),
    )


def _cmd_train(args) -> int:
    manifest, instances = fileio.load_instances(args.manifest)
    config = _train_config(args)
    dims = ModelDims(d_v=manifest.d_v, d_t=manifest.d_t)
    model = Model.create(dims, seed=args.seed, disabled=config.disabled)
    reports = train(instances, model, config)
    for i, report in enumerate(reports):
        _emit(sys.stdout, {"step": i, "mean_loss": report.mean_loss, "grad_norms": report.grad_norms})
    index_path = fileio.save_model(model, args.out)
    _emit(sys.stdout, {"snapshot": str(index_path), "steps": len(reports)})
    return 0


def _select_from_scores(args, out) -> int:
    try:
        scores = np.array([float(s) for s in args.scores.split(",")])
    except ValueError as exc:
        raise CliError(f"--scores: {exc}") from exc
    if args.deterministic:
        selection = hard_topk(scores, args.k)
    else:
        graph = Graph()
        selection = relaxed_topk(
            graph.constant(scores),
            SamplerConfig(k=args.k, tau=args.tau, stochastic=True),
            np.random.default_rng(args.seed),
            graph,
            seed=args.seed,
        )
    _emit(
        out,
        {
            "indices": selection.indices.tolist(),
            "relaxed_weights": selection.relaxed_weights.tolist(),
            "mode": selection.mode,
            "aggregate": scores.tolist(),
        },
    )
    return 0


def _cmd_select(args) -> int:
    out, should_close = _open_out(args.out)
    try:
        if args.scores is not None:
            return _select_from_scores(args, out)
        if args.manifest is None:
            raise CliError("select: --manifest is required unless --scores is given")
        manifest, instances = fileio.load_instances(args.manifest)
        disabled = _parse_ablate(args.ablate)
        if args.snapshot:
            model = fileio.load_model(args.snapshot)
            disabled = disabled | model.disabled
        else:
            model = Model.create(
                ModelDims(d_v=manifest.d_v, d_t=manifest.d_t), seed=args.seed, disabled=disabled
            )
        rng = np.random.default_rng(args.seed)
        for i, inst in enumerate(instances):
            graph = Graph()
            breakdown = score_frames(inst.frames, inst.question, model.scorer, graph, disabled)
            if args.deterministic:
                selection = hard_topk(breakdown.aggregate, args.k)
            else:
                selection = relaxed_topk(
                    breakdown.aggregate_nodes,
                    SamplerConfig(k=args.k, tau=args.tau, stochastic=True),
                    rng,
                    graph,
                    seed=args.seed,
                )
            _emit(
                out,
                {
                    "instance": i,
                    "video": inst.frames.video_id,
                    "indices": selection.indices.tolist(),
                    "mode": selection.mode,
                    "relaxed_weights": selection.relaxed_weights.tolist(),
                    "qfs": breakdown.qfs.tolist(),
                    "qfm": breakdown.qfm.tolist(),
                    "ifd": breakdown.ifd.tolist(),
                    "aggregate": breakdown.aggregate.tolist(),
                },
            )
        return 0
    finally:
        if should_close:
            out.close()


def _cmd_eval(args) -> int:
    _, instances = fileio.load_instances(args.manifest)
    model = fileio.load_model(args.snapshot)
    k_prime = args.k if args.k_prime is None else args.k_prime
    metrics = bench.evaluate(model, instances, k_prime)
    out, should_close = _open_out(args.out)
    try:
        _emit(
            out,
            {
                "keyframe_recall": metrics.keyframe_recall,
                "answer_accuracy": metrics.answer_accuracy,
                "redundancy": metrics.redundancy,
                "instances": metrics.instances,
                "k_prime": k_prime,
            },
        )
    finally:
        if should_close:
            out.close()
    return 0


def _cmd_ablate(args) -> int:
    config = bench.BenchConfig(
        videos=args.videos,
        frames_per_video=args.frames,
        options=args.options,
        planted=args.planted,
        redundancy_cluster_size=args.cluster,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    result = bench.run_ablation(
        config,
        _train_config(args),
        seeds=_parse_seeds(args.seeds),
        k_prime=args.k_prime,
    )
    out, should_close = _open_out(args.out)
    try:
        for row in result.rows():
            _emit(out, row)
    finally:
        if should_close:
            out.close()
    summary = sys.stdout if should_close else sys.stderr
    summary.write(result.format_table() + "\n")
    return 0


def _cmd_gradcheck(args) -> int:
    out, should_close = _open_out(args.out)
    all_passed = True
    try:
        for name in CHECK_NAMES:
            report = run_check(name, seed=args.seed, step=args.step, tolerance=args.tolerance)
            all_passed &= report.passed
            _emit(
                out,
                {
                    "check": name,
                    "passed": report.passed,
                    "max_relative_error": report.max_relative_error,
                    "tolerance": report.tolerance,
                    "worst_parameter": report.worst_parameter,
                },
            )
    finally:
        if should_close:
            out.close()
    return 0 if all_passed else 1


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "select": _cmd_select,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, OSError, EvaluationError) as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
