"""Overfit a single synthetic instance and print the loss curve.

Demonstrates gradient flow from the answer loss through the relaxed frame
sampler into the scorer parameters.
"""

import argparse

import numpy as np

from framepick import BenchConfig, Model, TrainConfig, generate_dataset
from framepick.pipeline import training_step


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    config = BenchConfig(videos=1, seed=args.seed)
    instance = generate_dataset(config).instances[0]
    model = Model.create(config.dims, seed=args.seed + 1)
    train_config = TrainConfig(
        k=8, tau=0.1, stochastic=True, learning_rate=args.lr, batch_size=1, seed=args.seed
    )
    rng = np.random.default_rng(args.seed)
    for step in range(args.steps):
        report = training_step([instance], model, train_config, rng)
        if step % 20 == 0 or step == args.steps - 1:
            scorer_norm = sum(
                v for k, v in report.grad_norms.items() if k.startswith("scorer.")
            )
            print(
                f"step {step:4d}  loss {report.mean_loss:.5f}  "
                f"scorer grad mass {scorer_norm:.4f}"
            )


if __name__ == "__main__":
    main()
