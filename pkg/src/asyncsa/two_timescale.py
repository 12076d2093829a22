"""Coupled slow/fast asynchronous iteration.

The slow iterate ``x`` (step ``alpha``) and the fast iterate ``y`` (step
``gamma``) share one scheduling chain over a joint family whose elements carry
an x-part and a y-part.  Each part drives its own counters.
"""
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import AssumptionViolation, BoundednessViolation, ConfigError, KernelValidityError
from .rng import Streams
from .sa_engine import NoiseModel, BiasModel
from .scheduler import ROW_SUM_TOL, sample_index
from .stepsize import is_admissible_pair


@dataclass(frozen=True)
class JointFamily:
    """Pairs ``(I-part, J-part)`` of component subsets for ``x`` (size k) and ``y`` (size l)."""

    pairs: tuple
    k: int
    l: int

    def __post_init__(self):
        pairs = tuple((tuple(sorted(int(i) for i in a)), tuple(sorted(int(j) for j in b)))
                      for a, b in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise ConfigError("joint family is empty")
        if len(set(pairs)) != len(pairs):
            raise ConfigError("joint family elements must be distinct")
        for a, b in pairs:
            if not a or not b:
                raise ConfigError(f"element {(a, b)} must update both iterates")
            if a[0] < 0 or a[-1] >= self.k or b[0] < 0 or b[-1] >= self.l:
                raise ConfigError(f"element {(a, b)} has out-of-range components")
        for name, part, size in (("x", 0, self.k), ("y", 1, self.l)):
            covered = set().union(*(set(p[part]) for p in pairs))
            missing = sorted(set(range(size)) - covered)
            if missing:
                raise AssumptionViolation("B4(b)", f"{name}-components {missing} appear in no element")

    def __len__(self):
        return len(self.pairs)

    def masks(self):
        mx = np.zeros((len(self.pairs), self.k), dtype=bool)
        my = np.zeros((len(self.pairs), self.l), dtype=bool)
        for j, (a, b) in enumerate(self.pairs):
            mx[j, list(a)] = True
            my[j, list(b)] = True
        return mx, my


@dataclass
class FastLimitOracle:
    """Equilibrium map ``x -> Lambda(x)`` of the fast iterate."""

    lam: object
    tolerance: float = 0.02

    def __call__(self, x):
        return np.asarray(self.lam(np.asarray(x, dtype=float)), dtype=float)

    def lipschitz_probe(self, x_grid):
        """Largest ``||Lambda(x) - Lambda(x')|| / ||x - x'||`` over grid pairs."""
        xs = [np.asarray(x, dtype=float) for x in x_grid]
        vals = [self(x) for x in xs]
        best = 0.0
        for a in range(len(xs)):
            for b in range(a + 1, len(xs)):
                dx = np.linalg.norm(xs[a] - xs[b])
                if dx > 0:
                    best = max(best, np.linalg.norm(vals[a] - vals[b]) / dx)
        return best


def tracking_error(y, x, oracle):
    """``||y - Lambda(x)||_inf``."""
    return float(np.abs(np.asarray(y, dtype=float) - oracle(x)).max())


@dataclass
class CoupledState:
    n: int
    x: np.ndarray
    y: np.ndarray
    nu: np.ndarray
    phi: np.ndarray
    current: int
    tau_bar: float = 0.0
    rho_bar: float = 0.0


@dataclass
class CoupledLog:
    """Per-iteration record with rows ``0..N`` as in the single-timescale log."""

    tau_bar: np.ndarray
    rho_bar: np.ndarray
    x: np.ndarray
    y: np.ndarray
    subset: np.ndarray
    mask_x: np.ndarray
    mask_y: np.ndarray
    bar_alpha: np.ndarray
    bar_gamma: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.tau_bar) - 1

    @property
    def ratio(self):
        """``bar_alpha_n / bar_gamma_n`` (row 0 is zero)."""
        out = np.zeros_like(self.bar_alpha)
        out[1:] = self.bar_alpha[1:] / self.bar_gamma[1:]
        return out

    def to_csv(self, path, thin=1):
        k, l = self.x.shape[1], self.y.shape[1]
        header = ",".join(["n", "tau_bar", "rho_bar"] + [f"x_{i + 1}" for i in range(k)]
                          + [f"y_{j + 1}" for j in range(l)] + ["ratio"])
        ratio = self.ratio
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for n in range(0, self.n_steps + 1, int(thin)):
                vals = [self.tau_bar[n], self.rho_bar[n], *self.x[n], *self.y[n], ratio[n]]
                fh.write(",".join([str(n)] + [format(v, ".17g") for v in vals]) + "\n")


def ratio_trend(ratio):
    """Max of the step ratio over ``n in [1, 10)`` and over the last decade ``[N/10, N]``."""
    ratio = np.asarray(ratio, dtype=float)
    n = len(ratio) - 1
    if n < 10:
        raise ConfigError("need at least 10 iterations for a decade comparison")
    return float(ratio[1:10].max()), float(ratio[max(n // 10, 1):].max())


class TwoTimescaleSA:
    """Coupled asynchronous SA.

    ``F`` and ``G`` are selection oracles on the stacked argument ``(x, y)``
    returning k- and l-vectors.  ``pin_fast`` (a map ``x -> Lambda(x)``)
    replaces the fast iterate by its equilibrium at every step.
    """

    def __init__(self, F, G, alpha, gamma, kernel, family, noise_x=None, noise_y=None,
                 bias_x=None, bias_y=None, box_x=None, box_y=None, tie_policy="lowest-index",
                 pin_fast=None):
        if not is_admissible_pair(alpha, gamma):
            raise ConfigError(
                f"slow schedule {alpha} must decay faster than fast schedule {gamma} (B2)(c)")
        self.F, self.G = F, G
        self.alpha, self.gamma = alpha, gamma
        self.kernel = kernel
        self.family = family
        self.noise_x = noise_x or NoiseModel()
        self.noise_y = noise_y or NoiseModel()
        self.bias_x = bias_x or BiasModel()
        self.bias_y = bias_y or BiasModel()
        self.box_x = None if box_x is None else (np.asarray(box_x[0], float), np.asarray(box_x[1], float))
        self.box_y = None if box_y is None else (np.asarray(box_y[0], float), np.asarray(box_y[1], float))
        self.tie_policy = tie_policy
        self.pin_fast = pin_fast
        self._mx, self._my = family.masks()

    @staticmethod
    def _check(box, n, v):
        if not np.all(np.isfinite(v)) or (box is not None and (np.any(v < box[0]) or np.any(v > box[1]))):
            raise BoundednessViolation("B1(a)", n, v)

    def run(self, x0, y0, n_steps, seed, initial_subset=0):
        fam = self.family
        k, l = fam.k, fam.l
        x = np.array(x0, dtype=float)
        y = np.array(y0, dtype=float)
        if x.shape != (k,) or y.shape != (l,):
            raise ConfigError("initial iterates do not match the joint family dimensions")
        streams = Streams(seed)
        U = streams["scheduler"].random(n_steps)
        Vx = self.noise_x.draw(streams["noise"], n_steps, k)
        Vy = self.noise_y.draw(streams["noise-fast"], n_steps, l)
        steps_n = np.arange(1, n_steps + 1)
        Dx = self.bias_x.values(steps_n, k)
        Dy = self.bias_y.values(steps_n, l)
        ties = streams["ties"] if self.tie_policy == "random" else None

        xs = np.zeros((n_steps + 1, k))
        ys = np.zeros((n_steps + 1, l))
        seq = np.zeros(n_steps + 1, dtype=np.int64)
        ax = np.zeros((n_steps + 1, k))
        gy = np.zeros((n_steps + 1, l))
        nu = np.zeros(k, dtype=np.int64)
        phi = np.zeros(l, dtype=np.int64)
        seq[0] = int(initial_subset)
        if self.pin_fast is not None:
            y = np.asarray(self.pin_fast(x), dtype=float)
        self._check(self.box_x, 0, x)
        self._check(self.box_y, 0, y)
        xs[0], ys[0] = x, y
        for n in range(n_steps):
            z = np.concatenate([x, y])
            fx = np.asarray(self.F.select(z, self.tie_policy, ties), dtype=float)
            gv = np.asarray(self.G.select(z, self.tie_policy, ties), dtype=float)
            row = np.asarray(self.kernel.row(int(seq[n]), x), dtype=float)
            if row.shape != (len(fam),) or np.any(row < 0) or abs(row.sum() - 1.0) > ROW_SUM_TOL:
                raise KernelValidityError(f"row {seq[n]} at x={x!r} is not a probability vector")
            j = sample_index(row, U[n])
            seq[n + 1] = j
            mx, my = self._mx[j], self._my[j]
            nu[mx] += 1
            phi[my] += 1
            ax[n + 1, mx] = self.alpha.values(nu[mx])
            gy[n + 1, my] = self.gamma.values(phi[my])
            x = x + ax[n + 1] * (fx + Vx[n] + Dx[n])
            if self.pin_fast is not None:
                y = np.asarray(self.pin_fast(x), dtype=float)
            else:
                y = y + gy[n + 1] * (gv + Vy[n] + Dy[n])
            self._check(self.box_x, n + 1, x)
            self._check(self.box_y, n + 1, y)
            xs[n + 1], ys[n + 1] = x, y
        bar_a = ax.max(axis=1)
        bar_g = gy.max(axis=1)
        return CoupledLog(np.cumsum(bar_a), np.cumsum(bar_g), xs, ys, seq,
                          self._mx[seq] & (np.arange(n_steps + 1) > 0)[:, None],
                          self._my[seq] & (np.arange(n_steps + 1) > 0)[:, None],
                          bar_a, bar_g, {"seed": int(seed)})


@dataclass
class StackedField:
    """Adapter exposing ``z -> block`` from a callable on ``(x, y)``."""

    fn: object
    k: int

    def select(self, z, tie_policy="lowest-index", rng=None):
        z = np.asarray(z, dtype=float)
        return self.fn(z[:self.k], z[self.k:])
