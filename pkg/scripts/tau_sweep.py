"""Show the relaxed top-k weights collapsing onto the hard selection as the
temperature drops."""

import argparse

import numpy as np

from framepick import Graph, SamplerConfig, hard_topk, relaxed_topk


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--k", type=int, default=2)
    parser.add_argument("--scores", type=str, default="5,1,3")
    args = parser.parse_args()

    scores = np.array([float(s) for s in args.scores.split(",")])
    hard = hard_topk(scores, args.k)
    print(f"scores {scores.tolist()}, hard top-{args.k} indices {hard.indices.tolist()}")
    for tau in (1.0, 0.1, 0.01, 0.001):
        graph = Graph()
        sel = relaxed_topk(
            graph.constant(scores),
            SamplerConfig(k=args.k, tau=tau, stochastic=False),
            None,
            graph,
        )
        deviation = np.max(np.abs(sel.relaxed_weights - hard.relaxed_weights))
        print(
            f"tau={tau:<6} weights {np.round(sel.relaxed_weights, 4).tolist()}"
            f"  max deviation {deviation:.2e}"
        )


if __name__ == "__main__":
    main()
