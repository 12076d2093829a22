"""Single-timescale asynchronous stochastic approximation.

Each iteration draws an update subset from the scheduling chain, bumps the
counters of its components, and moves those components by their own step
``alpha(nu(i))`` along ``f_n + V_{n+1} + d_{n+1}`` with ``f_n`` selected from
``F(x_n)``.
"""
from dataclasses import dataclass, field as dc_field
import hashlib
import json

import numpy as np

from .errors import BoundednessViolation, ConfigError, InsufficientHorizon, KernelValidityError
from .mean_field import all_finite
from .rng import Streams
from .scheduler import ROW_SUM_TOL, sample_index, min_update_proportion
from .stepsize import ratio_bound

NOISE_KINDS = ("zero", "gaussian", "bounded-uniform")


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean noise ``V_n``.

    ``scale`` is the standard deviation for ``gaussian`` and the half-width for
    ``bounded-uniform``.  ``clip`` truncates gaussian draws symmetrically at
    ``clip * scale`` (symmetric truncation keeps the mean at zero).  With
    ``independent=False`` one scalar draw is shared by all components.
    """

    kind: str = "zero"
    scale: float = 1.0
    independent: bool = True
    clip: float = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("noise scale must be >= 0")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("clip must be positive")

    def draw(self, rng, n, k):
        cols = k if self.independent else 1
        if self.kind == "zero":
            v = np.zeros((n, cols))
        elif self.kind == "gaussian":
            v = rng.normal(0.0, self.scale, size=(n, cols))
            if self.clip is not None:
                c = self.clip * self.scale
                v = np.clip(v, -c, c)
        else:
            v = rng.uniform(-self.scale, self.scale, size=(n, cols))
        return np.broadcast_to(v, (n, k)).copy()

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "independent": self.independent, "clip": self.clip}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class BiasModel:
    """Deterministic bias ``d_n = coefficient * n**-rate`` on every component."""

    coefficient: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if self.coefficient != 0.0 and self.rate <= 0:
            raise ConfigError("a non-zero bias needs rate > 0 to vanish")

    def values(self, n, k):
        n = np.asarray(n, dtype=float)
        mag = self.coefficient * n ** -self.rate if self.coefficient else np.zeros_like(n)
        return np.repeat(mag[:, None], k, axis=1)

    def to_dict(self):
        return {"coefficient": self.coefficient, "rate": self.rate}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrajectoryLog:
    """Dense per-iteration record; row ``n`` holds time ``n`` (row 0 is the start).

    ``mask[n]``, ``bar_alpha[n]``, ``mu[n]``, ``V[n]``, ``d[n]`` describe the
    update that produced ``x[n]``; row 0 of these is zero.  ``f[n]`` is the
    selection made at ``x[n]``.
    """

    tau_bar: np.ndarray
    x: np.ndarray
    subset: np.ndarray
    mask: np.ndarray
    bar_alpha: np.ndarray
    mu: np.ndarray
    f: np.ndarray
    V: np.ndarray
    d: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.tau_bar) - 1

    @property
    def dim(self):
        return self.x.shape[1]

    def counters(self):
        """``nu_n(i)`` for every ``n`` as an ``(N+1, K)`` integer array."""
        return np.cumsum(self.mask, axis=0, dtype=np.int64)

    def truncated(self, n):
        """The first ``n`` iterations (rows ``0..n``)."""
        sl = slice(0, n + 1)
        return TrajectoryLog(self.tau_bar[sl], self.x[sl], self.subset[sl], self.mask[sl],
                             self.bar_alpha[sl], self.mu[sl], self.f[sl], self.V[sl], self.d[sl],
                             dict(self.meta))

    def to_csv(self, path, thin=1):
        k = self.dim
        header = ",".join(["n", "tau_bar"] + [f"x_{i + 1}" for i in range(k)]
                          + [f"upd_{i + 1}" for i in range(k)] + ["alpha_bar"])
        rows = np.arange(0, self.n_steps + 1, int(thin))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for n in rows:
                parts = [str(int(n)), format(self.tau_bar[n], ".17g")]
                parts += [format(v, ".17g") for v in self.x[n]]
                parts += ["1" if m else "0" for m in self.mask[n]]
                parts.append(format(self.bar_alpha[n], ".17g"))
                fh.write(",".join(parts) + "\n")


def config_hash(obj):
    """Short SHA-256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_metadata(path, seed, config):
    with open(path, "w") as fh:
        json.dump({"seed": int(seed), "config_hash": config_hash(config), "config": config},
                  fh, indent=2, sort_keys=True)


@dataclass
class EngineState:
    n: int
    x: np.ndarray
    counters: np.ndarray
    current_subset: int
    tau_bar: float


class AsyncSA:
    """Asynchronous SA over a set-valued field with a Markov-scheduled update family.

    ``box`` is the compact set C as ``(lower, upper)`` arrays; leaving it stops
    the run with a boundedness violation rather than projecting back.
    """

    def __init__(self, field, schedule, kernel, family, noise=None, bias=None, box=None,
                 tie_policy="lowest-index", assumption="A1(a)"):
        if field.dim != family.n_components:
            raise ConfigError(f"field dimension {field.dim} != family components {family.n_components}")
        self.field = field
        self.schedule = schedule
        self.kernel = kernel
        self.family = family
        self.noise = noise or NoiseModel()
        self.bias = bias or BiasModel()
        self.box = None if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
        self.tie_policy = tie_policy
        self.assumption = assumption
        self._masks = family.masks()
        self._members = [np.array(s) for s in family.subsets]

    def init_state(self, x0, initial_subset=0):
        x0 = np.array(x0, dtype=float)
        if x0.shape != (self.field.dim,):
            raise ConfigError(f"x0 has shape {x0.shape}, expected ({self.field.dim},)")
        self._check_box(0, x0)
        return EngineState(0, x0, np.zeros(self.field.dim, dtype=np.int64), int(initial_subset), 0.0)

    def _check_box(self, n, x):
        # NaN fails both comparisons, so the box test also rejects non-finite x
        if self.box is None:
            inside = all_finite(x)
        else:
            inside = (x >= self.box[0]).all() and (x <= self.box[1]).all()
        if not inside:
            raise BoundednessViolation(self.assumption, n, x)

    def _next_subset(self, current, x, u):
        row = np.asarray(self.kernel.row(current, x), dtype=float)
        if row.shape != (len(self.family),) or np.any(row < 0) or abs(row.sum() - 1.0) > ROW_SUM_TOL:
            raise KernelValidityError(f"row {current} at x={x!r} is not a probability vector")
        return sample_index(row, u)

    def step(self, state, streams):
        """Advance one iteration in place; returns ``(state, record)``.

        Draws from ``streams`` in the same order as :meth:`run`, so a loop of
        ``step`` calls reproduces ``run`` for the same seed.
        """
        k = self.field.dim
        u = streams["scheduler"].random()
        v = self.noise.draw(streams["noise"], 1, k)[0]
        f = self.field.select(state.x, self.tie_policy, streams["ties"] if self.tie_policy == "random" else None)
        j = self._next_subset(state.current_subset, state.x, u)
        idx = self._members[j]
        state.counters[idx] += 1
        alphas = self.schedule.values(state.counters[idx])
        bar = float(alphas.max())
        mu = np.zeros(k)
        mu[idx] = alphas / bar
        d = self.bias.values([state.n + 1], k)[0]
        x_new = state.x.copy()
        x_new[idx] += alphas * (f[idx] + v[idx] + d[idx])
        state.n += 1
        self._check_box(state.n, x_new)
        state.x = x_new
        state.current_subset = j
        state.tau_bar += bar
        return state, {"subset": j, "bar_alpha": bar, "mu": mu, "f": f, "V": v, "d": d}

    def _precompute_schedule(self, seq):
        """Counter-driven quantities for a fixed subset sequence (rows 1..N)."""
        mask = self._masks[seq]
        counters = np.cumsum(mask, axis=0, dtype=np.int64)
        alpha = np.where(mask, self.schedule.values(np.maximum(counters, 1)), 0.0)
        bar = alpha.max(axis=1)
        return mask, alpha, bar

    def run(self, x0, n_steps, seed, initial_subset=0):
        """Run ``n_steps`` iterations from ``x0``; returns a :class:`TrajectoryLog`.

        On a boundedness violation the exception carries the partial log as
        ``partial_log``.
        """
        n_steps = int(n_steps)
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        streams = Streams(seed)
        state = self.init_state(x0, initial_subset)
        k = self.field.dim
        U = streams["scheduler"].random(n_steps)
        V = np.zeros((n_steps + 1, k))
        V[1:] = self.noise.draw(streams["noise"], n_steps, k)
        D = np.zeros((n_steps + 1, k))
        D[1:] = self.bias.values(np.arange(1, n_steps + 1), k)
        ties = streams["ties"] if self.tie_policy == "random" else None

        xs = np.zeros((n_steps + 1, k))
        fs = np.zeros((n_steps + 1, k))
        seq = np.zeros(n_steps + 1, dtype=np.int64)
        seq[0] = state.current_subset
        xs[0] = state.x

        fixed = self.kernel.state_independent
        if fixed:
            P = np.asarray(self.kernel.matrix(None), dtype=float)
            cur = state.current_subset
            rows = P.tolist()
            for n in range(n_steps):
                cur = sample_index(rows[cur], U[n])
                seq[n + 1] = cur
            mask, alpha, bar = self._precompute_schedule(seq[1:])
            steps = np.vstack([np.zeros(k), alpha])
        else:
            mask = np.zeros((n_steps, k), dtype=bool)
            steps = np.zeros((n_steps + 1, k))
            counters = state.counters

        x = state.x
        select = self.field.select
        policy = self.tie_policy
        n = 0
        try:
            for n in range(n_steps):
                f = select(x, policy, ties)
                fs[n] = f
                if not fixed:
                    j = self._next_subset(int(seq[n]), x, U[n])
                    seq[n + 1] = j
                    idx = self._members[j]
                    counters[idx] += 1
                    mask[n, idx] = True
                    steps[n + 1, idx] = self.schedule.values(counters[idx])
                x = x + steps[n + 1] * (f + V[n + 1] + D[n + 1])
                self._check_box(n + 1, x)
                xs[n + 1] = x
            fs[n_steps] = select(x, policy, ties)
        except BoundednessViolation as exc:
            xs[n + 1] = x
            exc.partial_log = self._assemble(xs, fs, seq, mask, steps, V, D, n + 1, seed)
            raise
        return self._assemble(xs, fs, seq, mask, steps, V, D, n_steps, seed)

    def _assemble(self, xs, fs, seq, mask, steps, V, D, last, seed):
        k = self.field.dim
        full_mask = np.zeros((len(seq), k), dtype=bool)
        full_mask[1:] = mask
        bar = steps.max(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(bar[:, None] > 0, steps / np.where(bar > 0, bar, 1.0)[:, None], 0.0)
        tau = np.cumsum(bar)
        sl = slice(0, last + 1)
        return TrajectoryLog(tau[sl], xs[sl], seq[sl], full_mask[sl], bar[sl], mu[sl],
                             fs[sl], V[sl], D[sl], {"seed": int(seed)})


def m_bar(log, t):
    """Largest ``k`` with ``tau_bar[k] <= t`` (vectorised)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigError("m_bar is defined for t >= 0")
    return np.searchsorted(log.tau_bar, t, side="right") - 1


def interpolate(log, t):
    """Piecewise-linear interpolation ``x_bar(t)`` through the knots ``(tau_bar_n, x_n)``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr > log.tau_bar[-1] * (1 + 1e-15)) or np.any(t_arr < 0):
        raise InsufficientHorizon(f"t outside [0, {log.tau_bar[-1]}]")
    k = np.minimum(m_bar(log, t_arr), log.n_steps)
    out = log.x[k].copy()
    inner = k < log.n_steps
    ki = k[inner]
    s = (t_arr[inner] - log.tau_bar[ki])[:, None]
    out[inner] += s * (log.x[ki + 1] - log.x[ki]) / log.bar_alpha[ki + 1][:, None]
    return out if np.ndim(t) else out[0]


def synchronous_reference(field, schedule, x0, n_steps):
    """Plain recursion ``x_{n+1} = x_n + alpha(n+1) F(x_n)`` for comparison."""
    x = np.array(x0, dtype=float)
    out = [x]
    for n in range(1, n_steps + 1):
        x = x + schedule(n) * field.select(x)
        out.append(x)
    return np.array(out)


def epsilon_estimate(eta, schedule, n_max=10**5):
    """Empirical relative-step floor ``eta / A_eta`` with ``A_eta`` a finite-horizon ratio sup."""
    if not 0.0 < eta < 1.0:
        raise ConfigError(f"eta={eta} outside (0, 1)")
    return eta / ratio_bound(schedule, eta, n_max).value


def eta_over_run(kernel, family, log, every=1000, extra_grid=()):
    """``eta_hat`` over a user grid plus every ``every``-th visited iterate."""
    grid = list(extra_grid) + [log.x[n] for n in range(0, log.n_steps + 1, every)]
    return min_update_proportion(kernel, family, grid)

