"""Critic tracking error with the actor frozen, across critic step-size exponents.

Prints the median over seeds of ``||Q_n - Q^pi||_inf`` for each exponent.
"""
import argparse

import numpy as np

from asyncsa.mdp import learn, q_values, random_model
from asyncsa.stepsize import Schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=10 ** 5)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--exponents", type=float, nargs="+", default=[0.6, 0.7, 0.8, 0.9])
    args = ap.parse_args()
    model = random_model(3, 2, 0.8, seed=0)
    pi = np.full((3, 2), 0.5)
    Q_pi = q_values(model, pi)
    print("p,median_error,max_error")
    for p in args.exponents:
        errs = [np.abs(learn(model, args.steps, s, gamma=Schedule("power", p), checkpoint_every=args.steps,
                             freeze_policy=True, pi0=pi).Q - Q_pi).max() for s in range(args.seeds)]
        print(f"{p},{np.median(errs):.4g},{np.max(errs):.4g}")


if __name__ == "__main__":
    main()
