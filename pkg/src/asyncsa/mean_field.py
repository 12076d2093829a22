"""Set-valued mean fields, the diagonal scaling box, and map diagnostics.

A field is a selection oracle ``select(x)`` returning one element of ``F(x)``
plus, where available, a finite vertex list whose convex hull is ``F(x)``.
"""
from dataclasses import dataclass, field as dc_field
import itertools
import math

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError

TIE_TOL = 1e-9
TIE_POLICIES = ("lowest-index", "random")


def all_finite(x):
    # a finite x @ x rules out inf and nan without a ufunc reduction
    return (x.ndim == 1 and math.isfinite(x @ x)) or bool(np.isfinite(x).all())


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if not all_finite(x):
        raise ConfigError(f"non-finite field argument {x!r}")
    return x


def _check_policy(tie_policy, rng):
    if tie_policy not in TIE_POLICIES:
        raise ConfigError(f"unknown tie policy {tie_policy!r}")
    if tie_policy == "random" and rng is None:
        raise ConfigError("random tie policy needs a seeded rng")


class SetValuedField:
    """Base class.  Subclasses set ``dim`` and ``growth_constant``."""

    dim = None
    growth_constant = 1.0

    def select(self, x, tie_policy="lowest-index", rng=None):
        raise NotImplementedError

    def vertices(self, x):
        """Extreme points of ``F(x)`` as an ``(m, dim)`` array, or None if unknown."""
        return None

    @property
    def has_vertices(self):
        return False

    def __call__(self, x):
        return self.select(x)


class LinearField(SetValuedField):
    """Single-valued ``F(x) = A x + b``."""

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        self.growth_constant = max(np.linalg.norm(self.A, 2), np.linalg.norm(self.b), 1e-12)
        self._A = self.A.tolist()
        self._diag = bool(np.all(self.A == np.diag(np.diag(self.A))))

    def select(self, x, tie_policy="lowest-index", rng=None):
        x = _check_x(x)
        return self.A @ x + self.b

    def vertices(self, x):
        return self.select(x)[None, :]

    @property
    def has_vertices(self):
        return True

    @classmethod
    def negative_identity(cls, k):
        return cls(-np.eye(k))


class SignField(SetValuedField):
    """``F_i(x) = -sign(x_i)`` with the kink filled in: ``F_i(0) = [-1, 1]``.

    At a kink the deterministic selection is the hull midpoint ``0``.
    """

    def __init__(self, dim, tol=TIE_TOL):
        self.dim = int(dim)
        self.tol = tol
        self.growth_constant = np.sqrt(self.dim)

    def select(self, x, tie_policy="lowest-index", rng=None):
        x = _check_x(x)
        _check_policy(tie_policy, rng)
        f = -np.sign(x)
        kink = np.abs(x) <= self.tol
        f[kink] = 0.0
        if tie_policy == "random" and kink.any():
            f[kink] = rng.uniform(-1.0, 1.0, size=int(kink.sum()))
        return f

    def vertices(self, x):
        x = _check_x(x)
        options = [(-1.0, 1.0) if abs(v) <= self.tol else (-float(np.sign(v)),) for v in x]
        return np.array(list(itertools.product(*options)), dtype=float)

    @property
    def has_vertices(self):
        return True


class PolytopeField(SetValuedField):
    """``F(x) = conv(vertex_fn(x))``; lowest-index selects the first vertex."""

    def __init__(self, vertex_fn, dim, growth_constant):
        self.vertex_fn = vertex_fn
        self.dim = int(dim)
        self.growth_constant = float(growth_constant)

    def vertices(self, x):
        return np.atleast_2d(np.asarray(self.vertex_fn(_check_x(x)), dtype=float))

    def select(self, x, tie_policy="lowest-index", rng=None):
        _check_policy(tie_policy, rng)
        V = self.vertices(x)
        if tie_policy == "lowest-index" or len(V) == 1:
            return V[0].copy()
        return rng.dirichlet(np.ones(len(V))) @ V

    @property
    def has_vertices(self):
        return True


class FunctionField(SetValuedField):
    """Black-box single-valued field without a vertex description."""

    def __init__(self, fn, dim, growth_constant):
        self.fn = fn
        self.dim = int(dim)
        self.growth_constant = float(growth_constant)

    def select(self, x, tie_policy="lowest-index", rng=None):
        return np.asarray(self.fn(_check_x(x)), dtype=float)


def best_response(q_row, tie_tol=TIE_TOL):
    """Indices within ``tie_tol`` of the row maximum (never empty)."""
    q_row = np.asarray(q_row, dtype=float)
    if not np.all(np.isfinite(q_row)):
        raise ConfigError("best response of a non-finite row")
    return np.flatnonzero(q_row >= q_row.max() - tie_tol).tolist()


class BestResponseField(SetValuedField):
    """Product-of-simplices best response ``F(x) = b(Q(x))`` (minus ``x`` if shifted).

    ``q_fn`` maps the flattened ``(n_states * n_actions)`` argument to an
    ``(n_states, n_actions)`` array of action values.
    """

    def __init__(self, q_fn, n_states, n_actions, subtract_identity=False, tie_tol=TIE_TOL):
        self.q_fn = q_fn
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.dim = self.n_states * self.n_actions
        self.subtract_identity = subtract_identity
        self.tie_tol = tie_tol
        self.growth_constant = np.sqrt(self.n_states) + (1.0 if subtract_identity else 0.0)

    def _q(self, x):
        return np.asarray(self.q_fn(x), dtype=float).reshape(self.n_states, self.n_actions)

    def best_sets(self, x):
        return [best_response(row, self.tie_tol) for row in self._q(_check_x(x))]

    def select(self, x, tie_policy="lowest-index", rng=None):
        x = _check_x(x)
        _check_policy(tie_policy, rng)
        b = np.zeros((self.n_states, self.n_actions))
        for s, ties in enumerate(self.best_sets(x)):
            a = ties[0] if tie_policy == "lowest-index" else ties[int(rng.integers(len(ties)))]
            b[s, a] = 1.0
        b = b.ravel()
        return b - x if self.subtract_identity else b

    def vertices(self, x):
        x = _check_x(x)
        rows = []
        for ties in itertools.product(*self.best_sets(x)):
            b = np.zeros((self.n_states, self.n_actions))
            b[np.arange(self.n_states), list(ties)] = 1.0
            rows.append(b.ravel())
        V = np.array(rows)
        return V - x if self.subtract_identity else V

    @property
    def has_vertices(self):
        return True


@dataclass(frozen=True)
class OmegaBox:
    """Diagonal scalings with entries in ``[epsilon, 1]``."""

    epsilon: float
    k: int

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon={self.epsilon} outside (0, 1]")

    def contains(self, omega, tol=0.0):
        omega = np.asarray(omega, dtype=float)
        return omega.shape == (self.k,) and bool(
            np.all(omega >= self.epsilon - tol) and np.all(omega <= 1.0 + tol)
        )

    def corners(self, max_corners=4096, rng=None):
        """All ``{epsilon, 1}^k`` corners, or a random subset when there are too many."""
        if 2 ** self.k <= max_corners:
            return np.array(list(itertools.product((self.epsilon, 1.0), repeat=self.k)))
        if rng is None:
            raise ConfigError("too many corners to enumerate; pass an rng to sample")
        bits = rng.integers(0, 2, size=(max_corners, self.k))
        return np.where(bits == 1, 1.0, self.epsilon)

    def sample(self, rng):
        return rng.uniform(self.epsilon, 1.0, size=self.k)


def scale(box, omega_diag, f):
    """Componentwise ``omega * f`` after checking ``omega`` lies in the box."""
    omega_diag = np.asarray(omega_diag, dtype=float)
    if not box.contains(omega_diag):
        raise ConfigError(f"omega {omega_diag!r} outside [{box.epsilon}, 1]^{box.k}")
    return omega_diag * np.asarray(f, dtype=float)


@dataclass
class ScaledField:
    """``Omega^eps . F``.  ``groups`` maps each component to a box entry.

    Components sharing a group share one scaling, e.g. all actions of a state
    in the policy update.  ``None`` means one entry per component.
    """

    base: SetValuedField
    box: OmegaBox
    groups: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        if self.groups is None:
            if self.box.k != self.base.dim:
                raise ConfigError("box dimension must match the field dimension")
            self.groups = np.arange(self.base.dim)
        else:
            self.groups = np.asarray(self.groups, dtype=int)
            if self.groups.shape != (self.base.dim,) or self.groups.max() >= self.box.k:
                raise ConfigError("groups must map every component to a box entry")

    @property
    def dim(self):
        return self.base.dim

    def expand(self, omega):
        return np.asarray(omega, dtype=float)[self.groups]

    def select(self, x, omega, tie_policy="lowest-index", rng=None):
        omega = np.asarray(omega, dtype=float)
        if not self.box.contains(omega):
            raise ConfigError(f"omega {omega!r} outside the box")
        return self.expand(omega) * self.base.select(x, tie_policy, rng)


def hull_distance(point, vertices):
    """L1 distance from ``point`` to ``conv(vertices)`` by linear programming."""
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    p = np.asarray(point, dtype=float)
    m, d = V.shape
    if m == 1:
        return float(np.abs(V[0] - p).sum())
    # variables: lambda (m), s_plus (d), s_minus (d)
    c = np.concatenate([np.zeros(m), np.ones(2 * d)])
    A_eq = np.zeros((d + 1, m + 2 * d))
    A_eq[:d, :m] = V.T
    A_eq[:d, m:m + d] = np.eye(d)
    A_eq[:d, m + d:] = -np.eye(d)
    A_eq[d, :m] = 1.0
    b_eq = np.concatenate([p, [1.0]])
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"hull distance LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def excess(A, B):
    """One-sided Hausdorff excess ``sup_{a in conv A} d(a, conv B)``."""
    return max(hull_distance(a, B) for a in np.atleast_2d(A))


@dataclass
class SaMapReport:
    has_vertices: bool
    convex_compact_ok: list
    growth_ratio: float
    growth_ok: bool
    usc_excess: list
    usc_hausdorff: list
    usc_ok: bool
    status: str

    def to_dict(self):
        return {
            "has_vertices": self.has_vertices,
            "convex_compact_ok": [bool(v) for v in self.convex_compact_ok],
            "growth_ratio": float(self.growth_ratio),
            "growth_ok": bool(self.growth_ok),
            "usc_excess": [[float(e) for e in row] for row in self.usc_excess],
            "usc_hausdorff": [[float(e) for e in row] for row in self.usc_hausdorff],
            "usc_ok": bool(self.usc_ok),
            "status": self.status,
        }


def check_sa_map(field, probe_points, deltas=(1e-1, 1e-2, 1e-3, 1e-4, 1e-6), rng=None,
                 usc_tol=1e-6, random_samples=8):
    """Probe the closed-graph, convex-compact and linear-growth criteria.

    Violations are reported, never raised.  Upper semi-continuity is probed
    along ``x + delta * d`` for a random unit direction ``d`` per probe: the
    excess of ``F(x + delta d)`` over ``F(x)`` at the smallest ``delta`` must
    be below ``usc_tol`` or below ``1e-3`` times its largest value.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    c = field.growth_constant
    probes = [_check_x(x) for x in probe_points]
    convex_ok, excesses, hausdorffs = [], [], []
    ratio = 0.0
    for x in probes:
        scale_x = 1.0 + np.linalg.norm(x)
        if field.has_vertices:
            V = field.vertices(x)
            convex_ok.append(len(V) > 0 and bool(np.all(np.isfinite(V))))
            ratio = max(ratio, np.linalg.norm(V, axis=1).max() / scale_x)
            d = rng.normal(size=x.shape)
            d /= np.linalg.norm(d)
            ex_row, h_row = [], []
            for delta in deltas:
                Vd = field.vertices(x + delta * d)
                ex_row.append(excess(Vd, V))
                h_row.append(max(ex_row[-1], excess(V, Vd)))
            excesses.append(ex_row)
            hausdorffs.append(h_row)
        else:
            samples = [field.select(x)]
            samples += [field.select(x + 1e-3 * rng.normal(size=x.shape)) for _ in range(random_samples)]
            convex_ok.append(bool(np.all(np.isfinite(samples[0]))))
            ratio = max(ratio, np.linalg.norm(samples[0]) / scale_x)
    growth_ok = ratio <= c * (1 + 1e-12)
    usc_ok = all(row[-1] <= max(usc_tol, 1e-3 * max(row)) for row in excesses) if field.has_vertices else False
    if field.has_vertices and all(convex_ok) and growth_ok and usc_ok:
        status = "verified"
    elif all(convex_ok) and growth_ok and not field.has_vertices:
        status = "empirically-supported"
    else:
        status = "violated"
    return SaMapReport(field.has_vertices, convex_ok, ratio, growth_ok, excesses, hausdorffs, usc_ok, status)
