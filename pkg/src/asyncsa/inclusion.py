"""Differential-inclusion flows and trajectory diagnostics.

The set-valued flow of ``dx/dt in Omega^eps F(x)`` is approximated by a
finite bundle of Euler paths, each following one selection policy.  Distances
to the bundle are optimistic: a trajectory is compared with its nearest path.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientHorizon
from .sa_engine import interpolate, m_bar

FLOW_POLICIES = ("fixed-omega", "per-step-random-omega", "corner-sweep")


@dataclass
class FlowSampler:
    """Euler integrator for a scaled field.

    ``fixed-omega`` uses ``omega`` (default all ones) on every path;
    ``per-step-random-omega`` redraws ``omega`` uniformly in the box each step;
    ``corner-sweep`` gives path ``j`` the ``j``-th box corner.  Path 0 always
    uses the lowest-index selection, later paths select randomly within ``F``.
    """

    field: object
    dt: float = 0.01
    policy: str = "fixed-omega"
    horizon: float = 10.0
    omega: np.ndarray = None

    def __post_init__(self):
        if self.policy not in FLOW_POLICIES:
            raise ConfigError(f"unknown flow policy {self.policy!r}")
        if not 0.0 < self.dt <= 0.1:
            raise ConfigError(f"dt={self.dt} outside (0, 0.1]")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        if self.omega is None:
            self.omega = np.ones(self.field.box.k)
        self.omega = np.asarray(self.omega, dtype=float)
        if not self.field.box.contains(self.omega):
            raise ConfigError("fixed omega outside the box")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    def with_horizon(self, horizon):
        return FlowSampler(self.field, self.dt, self.policy, horizon, self.omega)


@dataclass
class FlowBundle:
    times: np.ndarray
    paths: np.ndarray
    blown_up: np.ndarray

    @property
    def size(self):
        return self.paths.shape[0]


def euler_flow(sampler, x0, n_selections, rng):
    """``n_selections`` Euler paths ``x <- x + dt * omega * f`` from ``x0``.

    A path whose norm exceeds ``10 c (1 + ||x0||)`` is stopped, flagged, and
    padded with NaN; ``c`` is floored at 1 so a near-zero field is not flagged.
    """
    if n_selections < 1:
        raise ConfigError("n_selections must be >= 1")
    field = sampler.field
    x0 = np.asarray(x0, dtype=float)
    steps = sampler.n_steps
    limit = 10.0 * max(field.base.growth_constant, 1.0) * (1.0 + np.linalg.norm(x0))
    paths = np.full((n_selections, steps + 1, x0.size), np.nan)
    blown = np.zeros(n_selections, dtype=bool)
    corners = field.box.corners(rng=rng) if sampler.policy == "corner-sweep" else None
    for j in range(n_selections):
        tie = "lowest-index" if j == 0 else "random"
        x = x0.copy()
        paths[j, 0] = x
        if sampler.policy == "corner-sweep":
            omega = corners[j % len(corners)]
        else:
            omega = sampler.omega
        for t in range(steps):
            if sampler.policy == "per-step-random-omega":
                omega = field.box.sample(rng)
            x = x + sampler.dt * field.select(x, omega, tie, rng)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
                blown[j] = True
                break
            paths[j, t + 1] = x
    times = np.arange(steps + 1) * sampler.dt
    return FlowBundle(times, paths, blown)


@dataclass
class AptReport:
    window: float
    probe_times: np.ndarray
    distances: np.ndarray
    bundle_size: int

    def to_dict(self):
        return {"window": self.window, "probe_times": self.probe_times.tolist(),
                "distances": self.distances.tolist(), "bundle_size": self.bundle_size}


def apt_distance(log, sampler, probe_times, T, n_selections=8, rng=None):
    """``max_s min_paths ||x_bar(t+s) - path(s)||`` for each probe time ``t``."""
    rng = np.random.default_rng(0) if rng is None else rng
    probe_times = np.asarray(probe_times, dtype=float)
    if np.any(probe_times + T > log.tau_bar[-1]):
        raise InsufficientHorizon(f"probe window exceeds logged horizon {log.tau_bar[-1]:.4g}")
    flow = sampler.with_horizon(T)
    out = []
    for t in probe_times:
        bundle = euler_flow(flow, interpolate(log, t), n_selections, rng)
        traj = interpolate(log, t + bundle.times)
        live = bundle.paths[~bundle.blown_up]
        if len(live) == 0:
            out.append(np.inf)
            continue
        gaps = np.linalg.norm(live - traj[None], axis=2)
        out.append(float(gaps.min(axis=0).max()))
    return AptReport(float(T), probe_times, np.array(out), n_selections)


@dataclass
class KushnerClarkReport:
    start: int
    end: int
    noise_sup: float
    companion_sup: float


def _window_end(log, n, T):
    end = int(m_bar(log, log.tau_bar[n] + T))
    if log.tau_bar[n] + T > log.tau_bar[-1]:
        raise InsufficientHorizon(f"window [{n}, tau_bar+{T}] runs past the log")
    return end


def kushner_clark_sup(log, T, n_start, epsilon=None):
    """Windowed sup of partial noise sums, and of the ``M - M_tilde`` companion sum.

    Sums run over ``i = n..k-1`` for ``k <= m_bar(tau_bar_n + T)``.  The
    companion uses ``M_tilde = diag(max(mu, epsilon))`` and the logged
    selections ``f_i``; it is NaN when ``epsilon`` is None.
    """
    n = int(n_start)
    end = _window_end(log, n, T)
    if end <= n:
        return KushnerClarkReport(n, end, 0.0, 0.0 if epsilon is not None else np.nan)
    rows = slice(n + 1, end + 1)
    steps = log.bar_alpha[rows, None] * log.mu[rows]
    noise = np.cumsum(steps * log.V[rows], axis=0)
    noise_sup = float(np.linalg.norm(noise, axis=1).max())
    comp = np.nan
    if epsilon is not None:
        gap = log.mu[rows] - np.maximum(log.mu[rows], epsilon)
        terms = log.bar_alpha[rows, None] * gap * log.f[n:end]
        comp = float(np.linalg.norm(np.cumsum(terms, axis=0), axis=1).max())
    return KushnerClarkReport(n, end, noise_sup, comp)


def kushner_clark_trend(log, T, starts, epsilon=None, decay=0.5):
    """Reports at several window starts plus flags for sums that fail to decay.

    A sum is flagged when its last-window sup exceeds ``decay`` times its
    first-window sup.
    """
    reports = [kushner_clark_sup(log, T, n, epsilon) for n in starts]
    noise_flag = reports[-1].noise_sup > decay * reports[0].noise_sup
    comp_flag = (epsilon is not None and reports[-1].companion_sup > decay * reports[0].companion_sup)
    return reports, bool(noise_flag), bool(comp_flag)


def _cumulative_u(log, t):
    """``int_0^t u_i`` for every component, ``u_i = mu_{m_bar(s)+1}(i)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    steps = log.bar_alpha[:, None] * log.mu
    cum = np.vstack([np.zeros(log.dim), np.cumsum(steps[1:], axis=0)])
    k = m_bar(log, t)
    out = cum[k].copy()
    inner = k < log.n_steps
    ki = k[inner]
    out[inner] += (t[inner] - log.tau_bar[ki])[:, None] * log.mu[ki + 1]
    return out


def relative_step_integral(log, i, t, v):
    """Exact ``int_t^{t+v} u_i(s) ds``; ``i=None`` returns all components."""
    if t < 0 or v < 0:
        raise ConfigError("window must have t >= 0 and v >= 0")
    if t + v > log.tau_bar[-1]:
        raise InsufficientHorizon(f"window [{t}, {t + v}] exceeds logged horizon {log.tau_bar[-1]:.4g}")
    c = _cumulative_u(log, [t, t + v])
    total = c[1] - c[0]
    return total if i is None else float(total[i])


def eta_violation_flags(log, v, eps_hat, starts):
    """``(windows, K)`` flags where a component's integral falls below ``v * eps_hat / 2``."""
    ints = np.array([relative_step_integral(log, None, t, v) for t in starts])
    return ints, ints < 0.5 * v * eps_hat


@dataclass
class LyapunovSpec:
    """Candidate ``W`` with target-set test and optional analytic gradient."""

    W: object
    target: object
    gradient: object = None
    differentiable: bool = True
    fd_step: float = 1e-6

    def grad(self, x):
        if not self.differentiable:
            raise ConfigError("W is declared non-differentiable; the inner-product test needs a gradient")
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        if self.fd_step is None:
            raise ConfigError("no gradient and finite differences disabled")
        return finite_difference_gradient(self.W, x, self.fd_step)


def finite_difference_gradient(W, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (W(x + e) - W(x - e)) / (2 * h)
    return g


@dataclass
class LyapunovReport:
    max_inner: np.ndarray
    inner_ok: bool
    decrease_ok: np.ndarray
    skipped: int
    tol: float

    @property
    def passed(self):
        return bool(self.inner_ok and np.all(self.decrease_ok))

    def to_dict(self):
        return {"max_inner": self.max_inner.tolist(), "inner_ok": self.inner_ok,
                "decrease_ok": self.decrease_ok.tolist(), "skipped": self.skipped, "tol": self.tol,
                "passed": self.passed}


def max_inner_product(spec, field, x, corners):
    """``max over corners omega and vertices v of <grad W(x), omega * v>``."""
    g = spec.grad(x)
    V = field.base.vertices(x)
    if V is None:
        raise ConfigError("the inner-product test needs a vertex description of F(x)")
    W_om = np.array([field.expand(c) for c in corners])
    return float(((W_om * g[None, :]) @ V.T).max())


def lyapunov_check(spec, sampler, probes, rng=None, tol=1e-8, n_selections=4, flow_horizon=None):
    """Inner-product test at every probe outside the target, then a flow-decrease test.

    Decrease means ``W`` at the end of every bundle path is strictly below ``W``
    at the probe.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    field = sampler.field
    corners = field.box.corners(rng=rng)
    flow = sampler.with_horizon(flow_horizon if flow_horizon is not None else sampler.horizon)
    inner, decrease, skipped = [], [], 0
    for x in probes:
        x = np.asarray(x, dtype=float)
        if spec.target(x):
            skipped += 1
            continue
        inner.append(max_inner_product(spec, field, x, corners))
        if flow.n_steps == 0:
            decrease.append(True)
            continue
        bundle = euler_flow(flow, x, n_selections, rng)
        w0 = spec.W(x)
        ends = [spec.W(p[-1]) for p, b in zip(bundle.paths, bundle.blown_up) if not b]
        decrease.append(bool(ends) and all(w < w0 for w in ends))
    inner = np.array(inner)
    ok = bool(np.all(inner <= tol)) if inner.size else True
    return LyapunovReport(inner, ok, np.array(decrease, dtype=bool), skipped, tol)
