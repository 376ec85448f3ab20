"""Paired ablation study on the adversarial synthetic benchmark.

Trains the full scorer and each ablated variant, plus the uniform and random
selection baselines, on identical per-seed datasets, then compares planted-
keyframe recall, answer accuracy, and selected-set redundancy.
"""

import argparse
import json

from framepick import BenchConfig, TrainConfig, run_ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--videos", type=int, default=90)
    parser.add_argument("--cluster", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=14)
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--seeds", type=str, default="1,2,3")
    parser.add_argument("--out", type=str, default=None, help="JSONL output path")
    args = parser.parse_args()

    config = BenchConfig(videos=args.videos, redundancy_cluster_size=args.cluster)
    train_config = TrainConfig(k=8, tau=0.1, learning_rate=args.lr, epochs=args.epochs)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    result = run_ablation(config, train_config, seeds=seeds)
    print(result.format_table())
    if args.out:
        with open(args.out, "w") as handle:
            for row in result.rows():
                handle.write(json.dumps(row) + "\n")
        print(f"rows written to {args.out}")


if __name__ == "__main__":
    main()
