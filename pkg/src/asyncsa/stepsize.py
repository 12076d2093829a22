"""Deterministic step-size schedules and asynchronous step-size bookkeeping."""
from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError

KINDS = ("power", "power-log")


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``alpha(n) = n**-p * log(n)**-q`` (1-indexed).

    ``kind="power"`` ignores ``q``.  For ``power-log`` the logarithm is floored
    at ``log 2`` so that ``alpha(1)`` is finite and the sequence stays
    non-increasing.
    """

    kind: str = "power"
    p: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not 0.5 < self.p <= 1.0:
            raise ConfigError(f"exponent p={self.p} outside (0.5, 1]")
        if self.q < 0:
            raise ConfigError(f"log exponent q={self.q} must be >= 0")
        if self.kind == "power-log" and self.p == 1.0 and self.q > 1.0:
            # sum 1/(n log(n)^q) converges for q > 1
            raise ConfigError("power-log with p=1 requires q <= 1 for a divergent step sum")

    @property
    def log_exponent(self):
        return self.q if self.kind == "power-log" else 0.0

    def __call__(self, n):
        if n < 1:
            raise ConfigError(f"schedules are 1-indexed; got n={n}")
        a = float(n) ** -self.p
        q = self.log_exponent
        if q:
            a /= max(math.log(n), math.log(2.0)) ** q
        return a

    def values(self, n):
        """Vectorised ``alpha`` over an integer array."""
        n = np.asarray(n, dtype=float)
        if np.any(n < 1):
            raise ConfigError("schedules are 1-indexed")
        a = n ** -self.p
        q = self.log_exponent
        if q:
            a = a / np.maximum(np.log(n), math.log(2.0)) ** q
        return a

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "q": self.q}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "power"), p=float(d.get("p", 1.0)), q=float(d.get("q", 0.0)))


@dataclass(frozen=True)
class RatioBound:
    value: float
    n: int


def integer_part(x, n, rounding="floor"):
    """``[x n]`` clipped below at 1 so that schedules stay 1-indexed."""
    xn = x * np.asarray(n, dtype=float)
    if rounding == "floor":
        m = np.floor(xn)
    elif rounding == "ceil":
        m = np.ceil(xn - 1e-12)
    else:
        raise ConfigError(f"unknown rounding {rounding!r}")
    return np.maximum(m, 1.0).astype(np.int64)


def ratio_bound(schedule, x, n_max, rounding="floor"):
    """Empirical ``sup_{2<=n<=n_max} alpha([x n]) / alpha(n)`` and its argmax.

    A finite-horizon estimate of the constant ``A_x``; a diagnostic, not a proof.
    """
    if not 0.0 < x < 1.0:
        raise ConfigError(f"x={x} outside (0, 1)")
    if n_max < 2:
        raise ConfigError("n_max must be >= 2")
    n = np.arange(2, int(n_max) + 1)
    ratios = schedule.values(integer_part(x, n, rounding)) / schedule.values(n)
    k = int(np.argmax(ratios))
    return RatioBound(float(ratios[k]), int(n[k]))


def analytic_ratio_bound(schedule, x):
    """Closed-form upper bound on ``A_x`` for the built-in families (floor convention).

    ``n / max(1, floor(x n)) <= 2 / x`` for every ``n >= 1``, and the log factor
    ratio is at most ``1 + log2(2 / x)``.
    """
    if not 0.0 < x < 1.0:
        raise ConfigError(f"x={x} outside (0, 1)")
    bound = (2.0 / x) ** schedule.p
    q = schedule.log_exponent
    if q:
        bound *= (1.0 + math.log2(2.0 / x)) ** q
    return bound


@dataclass(frozen=True)
class AsyncStepRecord:
    bar_alpha: float
    mu: np.ndarray


def async_step(schedule, counters, update_set):
    """Asynchronous step ``bar_alpha = max_{i in set} alpha(nu(i))`` and relative steps.

    ``counters`` must already include the current update.
    """
    update_set = list(update_set)
    if not update_set:
        raise ConfigError("update set must be non-empty")
    counters = np.asarray(counters)
    mu = np.zeros(len(counters))
    steps = [schedule(int(counters[i])) for i in update_set]
    bar = max(steps)
    for i, a in zip(update_set, steps):
        mu[i] = a / bar
    return AsyncStepRecord(bar, mu)


def is_admissible_pair(slow, fast):
    """True when ``slow(n) / fast(n) -> 0`` for the built-in families."""
    if slow.p != fast.p:
        return slow.p > fast.p
    return slow.log_exponent > fast.log_exponent
