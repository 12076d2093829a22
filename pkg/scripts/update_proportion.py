"""Running pair-visit proportions against the stationary lower bound.

For each seed prints ``eta_hat`` and the minimum of ``phi_n(s, a) / (n eta_hat)``
over ``n`` in each decade from 1e3 on.
"""
import argparse

import numpy as np

from asyncsa.mdp import eta_hat, learn, random_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2 * 10 ** 5)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    model = random_model(3, 2, 0.8, seed=0)
    edges = [10 ** 3, 10 ** 4, 10 ** 5, args.steps]
    print("seed,eta_hat," + ",".join(f"min_ratio_{a}_{b}" for a, b in zip(edges, edges[1:])))
    n = np.arange(1, args.steps + 1)
    for seed in range(args.seeds):
        res = learn(model, args.steps, seed)
        eta = eta_hat(model, 0.05, res.policies)
        ratio = (res.pair_counts() / n[:, None]).min(axis=1) / eta
        mins = [ratio[a - 1:b].min() for a, b in zip(edges, edges[1:])]
        print(f"{seed},{eta:.5g}," + ",".join(f"{m:.4f}" for m in mins))


if __name__ == "__main__":
    main()
