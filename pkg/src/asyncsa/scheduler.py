"""Controlled Markov chain over update subsets and its stationary analytics."""
from dataclasses import dataclass, field
from collections import deque
import math

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import AssumptionViolation, ConfigError, KernelValidityError

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class UpdateFamily:
    """Ordered list of non-empty, distinct component subsets of ``{0..K-1}``."""

    subsets: tuple
    n_components: int
    component_cover: tuple = field(init=False)

    def __post_init__(self):
        subsets = tuple(tuple(sorted(int(i) for i in s)) for s in self.subsets)
        object.__setattr__(self, "subsets", subsets)
        if not subsets:
            raise ConfigError("update family is empty")
        if len(set(subsets)) != len(subsets):
            raise ConfigError("update family subsets must be distinct")
        for s in subsets:
            if not s:
                raise ConfigError("update family subsets must be non-empty")
            if s[0] < 0 or s[-1] >= self.n_components:
                raise ConfigError(f"subset {s} has components outside 0..{self.n_components - 1}")
        cover = tuple(
            tuple(j for j, s in enumerate(subsets) if i in s) for i in range(self.n_components)
        )
        missing = [i for i, c in enumerate(cover) if not c]
        if missing:
            raise AssumptionViolation("A4(b)", f"components {missing} appear in no update subset")
        object.__setattr__(self, "component_cover", cover)

    def __len__(self):
        return len(self.subsets)

    def masks(self):
        """Boolean ``(|family|, K)`` membership matrix."""
        m = np.zeros((len(self.subsets), self.n_components), dtype=bool)
        for j, s in enumerate(self.subsets):
            m[j, list(s)] = True
        return m

    @classmethod
    def singletons(cls, k):
        return cls(tuple((i,) for i in range(k)), k)

    @classmethod
    def full(cls, k):
        return cls((tuple(range(k)),), k)


class TransitionKernel:
    """Transition probabilities ``P(current -> next | x)`` over family indices."""

    lipschitz_probe_step = 1e-4

    def matrix(self, x):
        raise NotImplementedError

    def row(self, current, x):
        return self.matrix(x)[current]

    @property
    def state_independent(self):
        return False


class ConstantKernel(TransitionKernel):
    def __init__(self, matrix):
        self.P = np.array(matrix, dtype=float)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ConfigError("kernel matrix must be square")
        check_stochastic(self.P)

    def matrix(self, x=None):
        return self.P

    def row(self, current, x=None):
        return self.P[current]

    @property
    def state_independent(self):
        return True


class FunctionKernel(TransitionKernel):
    """Kernel given by a callable ``x -> row-stochastic matrix``."""

    def __init__(self, fn):
        self.fn = fn

    def matrix(self, x):
        return np.asarray(self.fn(x), dtype=float)


def check_stochastic(P, tol=ROW_SUM_TOL):
    P = np.asarray(P, dtype=float)
    if np.any(P < -tol) or not np.all(np.isfinite(P)):
        raise KernelValidityError("transition matrix has negative or non-finite entries")
    bad = np.abs(P.sum(axis=-1) - 1.0) > tol
    if np.any(bad):
        raise KernelValidityError(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")


def sample_index(row, u):
    """Inverse-CDF sample of an index from ``row`` given a uniform ``u``."""
    total = 0.0
    last = len(row) - 1
    for j, p in enumerate(row):
        total += p
        if u < total:
            return j
    # rounding: fall back to the last index with positive mass
    while last > 0 and row[last] <= 0:
        last -= 1
    return last


def step(kernel, family, current, x, rng):
    """Sample the next subset index from the kernel row at ``(current, x)``."""
    row = np.asarray(kernel.row(current, x), dtype=float)
    if row.shape != (len(family),):
        raise KernelValidityError(f"row has shape {row.shape}, expected ({len(family)},)")
    if np.any(row < 0) or abs(row.sum() - 1.0) > ROW_SUM_TOL:
        raise KernelValidityError(f"row {current} at x={x!r} is not a probability vector")
    return sample_index(row, rng.random())


def period(P, tol=0.0):
    """Period of an irreducible chain from BFS levels on its support graph."""
    adj = np.asarray(P) > tol
    n = adj.shape[0]
    level = [-1] * n
    level[0] = 0
    queue = deque([0])
    g = 0
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return g


def check_ergodic(P, assumption="A4(b)"):
    """Raise unless the support graph of ``P`` is irreducible and aperiodic."""
    adj = (np.asarray(P) > 0).astype(int)
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    if n_comp != 1:
        raise AssumptionViolation(assumption, f"chain is reducible ({n_comp} communicating classes)")
    d = period(P)
    if d != 1:
        raise AssumptionViolation(assumption, f"chain is periodic with period {d}")


def stationary_from_matrix(P, assumption="A4(b)"):
    P = np.asarray(P, dtype=float)
    check_stochastic(P)
    check_ergodic(P, assumption)
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.abs(pi @ P - pi).max()
    if residual > 1e-10:
        raise AssumptionViolation(assumption, f"stationary solve residual {residual:.2e}")
    return pi


def stationary_distribution(kernel, family, x):
    """Unique stationary distribution of the chain frozen at ``x``."""
    P = kernel.matrix(x)
    if P.shape != (len(family), len(family)):
        raise KernelValidityError(f"kernel matrix has shape {P.shape}, expected {len(family)} square")
    return stationary_from_matrix(P)


def min_update_proportion(kernel, family, x_grid, return_witness=False):
    """``eta = min_x min_i sum_{subsets containing i} pi_x(subset)`` over a grid."""
    x_grid = list(x_grid)
    if not x_grid:
        raise ConfigError("x_grid must be non-empty")
    best = (math.inf, None, None)
    for g, x in enumerate(x_grid):
        pi = stationary_distribution(kernel, family, x)
        mass = np.array([pi[list(c)].sum() for c in family.component_cover])
        i = int(np.argmin(mass))
        if mass[i] < best[0]:
            best = (float(mass[i]), g, i)
    if return_witness:
        return best
    return best[0]


@dataclass(frozen=True)
class OccupancyRecord:
    w: np.ndarray
    nu_fraction: np.ndarray


def occupancy(subset_sequence, family):
    """Empirical subset frequencies and per-component update fractions."""
    seq = np.asarray(subset_sequence, dtype=np.int64)
    if seq.size == 0:
        raise ConfigError("run length must be >= 1")
    counts = np.bincount(seq, minlength=len(family))
    n = seq.size
    nu = counts @ family.masks().astype(np.int64)
    return OccupancyRecord(counts / n, nu / n)


def running_fractions(subset_sequence, family):
    """``nu_n(i) / n`` for every ``n`` as an ``(N, K)`` array (row ``n-1`` is time ``n``)."""
    seq = np.asarray(subset_sequence, dtype=np.int64)
    inc = family.masks().astype(np.int64)[seq]
    counts = np.cumsum(inc, axis=0)
    return counts / np.arange(1, seq.size + 1)[:, None]


def lipschitz_probe(kernel, x_grid):
    """Largest observed ``||P(x) - P(x')||_inf / ||x - x'||`` over grid pairs."""
    xs = [np.asarray(x, dtype=float) for x in x_grid]
    mats = [kernel.matrix(x) for x in xs]
    best = 0.0
    for a in range(len(xs)):
        for b in range(a + 1, len(xs)):
            dx = np.linalg.norm(xs[a] - xs[b])
            if dx > 0:
                best = max(best, np.abs(mats[a] - mats[b]).max() / dx)
    return best
