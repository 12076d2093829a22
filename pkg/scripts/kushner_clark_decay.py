"""Windowed noise-sum sups at increasing window starts for F(x) = -x.

Prints one CSV row per (seed, start).
"""
import argparse

import numpy as np

from asyncsa.inclusion import kushner_clark_sup
from asyncsa.mean_field import LinearField
from asyncsa.sa_engine import AsyncSA, NoiseModel
from asyncsa.scheduler import ConstantKernel, UpdateFamily
from asyncsa.stepsize import Schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=170000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--window", type=float, default=1.0)
    ap.add_argument("--starts", type=int, nargs="+", default=[10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5])
    args = ap.parse_args()
    eng = AsyncSA(LinearField.negative_identity(2), Schedule("power", 1.0), ConstantKernel(np.full((2, 2), 0.5)),
                  UpdateFamily.singletons(2), NoiseModel("gaussian", 1.0))
    print("seed,start,end,noise_sup")
    for seed in range(args.seeds):
        log = eng.run([1.0, 1.0], args.steps, seed=seed)
        for n in args.starts:
            rep = kushner_clark_sup(log, args.window, n)
            print(f"{seed},{rep.start},{rep.end},{rep.noise_sup:.6g}")


if __name__ == "__main__":
    main()
