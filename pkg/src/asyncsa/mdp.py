"""Discounted finite MDPs: exact oracles and the two-timescale actor-critic.

The critic moves ``Q(s, a)`` at the visited pair towards
``R + beta * V_n(s')`` with ``V_n(s) = sum_a pi_n(s, a) Q_n(s, a)``; the actor
moves ``pi(s)`` at the visited state towards a best-response vertex of
``Q_n(s)``.  Behaviour follows the floored policy ``pi (1 - A eps) + eps``.
"""
from dataclasses import dataclass, field as dc_field
import json

import numpy as np

from .errors import ConfigError, KernelValidityError
from .mean_field import BestResponseField, OmegaBox, ScaledField, TIE_TOL, best_response
from .rng import Streams, substream
from .sa_engine import NoiseModel
from .scheduler import FunctionKernel, UpdateFamily, check_ergodic, min_update_proportion
from .stepsize import Schedule

STOCHASTIC_TOL = 1e-12
DEFAULT_REWARD_NOISE = NoiseModel("gaussian", 0.5, clip=4.0)


@dataclass
class MdpModel:
    """``P[s, a, s']``, rewards ``r[s, a]`` and discount ``beta``."""

    P: np.ndarray
    r: np.ndarray
    beta: float
    reward_noise: NoiseModel = DEFAULT_REWARD_NOISE

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ConfigError(f"transitions must be [s][a][s'] with uniform action count; got {self.P.shape}")
        if self.r.shape != self.P.shape[:2]:
            raise ConfigError(f"rewards shape {self.r.shape} != {self.P.shape[:2]}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta={self.beta} outside (0, 1)")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=2) - 1.0) > STOCHASTIC_TOL):
            raise KernelValidityError("transition rows must be probability vectors")
        if not np.all(np.isfinite(self.r)):
            raise ConfigError("rewards must be finite")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    @property
    def r_max(self):
        return float(np.abs(self.r).max())

    @property
    def q_bound(self):
        """Half-width of the per-entry Q box."""
        return self.r_max / (1.0 - self.beta) + 1.0

    def check_chain(self):
        """Irreducible, aperiodic state chain under every floored policy.

        A floored policy plays every action, so the support is the union over actions.
        """
        check_ergodic(self.P.max(axis=1), "A4(b)")

    def to_dict(self):
        return {"states": self.n_states, "actions": self.n_actions,
                "transitions": self.P.tolist(), "rewards": self.r.tolist(), "beta": self.beta}

    @classmethod
    def from_dict(cls, d, check=True):
        states = d["states"] if isinstance(d["states"], int) else len(d["states"])
        actions = d["actions"] if isinstance(d["actions"], int) else len(d["actions"])
        rows = d["transitions"]
        if any(len(row) != actions for row in rows):
            raise ConfigError("every state must have the same number of actions")
        model = cls(np.array(rows, dtype=float), np.array(d["rewards"], dtype=float), float(d["beta"]))
        if model.P.shape[:2] != (states, actions):
            raise ConfigError(f"declared {states}x{actions} but transitions are {model.P.shape[:2]}")
        if check:
            model.check_chain()
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_model(n_states, n_actions, beta, seed):
    """Dirichlet(1) transitions and U[0, 1] rewards from a seeded stream."""
    rng = substream(seed, "model")
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.random((n_states, n_actions))
    return MdpModel(P, r, beta)


def check_policy(pi, model, tol=1e-12):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (model.n_states, model.n_actions):
        raise ConfigError(f"policy shape {pi.shape} != {(model.n_states, model.n_actions)}")
    if np.any(pi < -tol) or np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
        raise ConfigError("policy rows must be probability vectors")
    return pi


def policy_operator(model, pi):
    """Policy-averaged transition matrix and reward vector."""
    P_pi = np.einsum("sa,sat->st", pi, model.P)
    r_pi = (pi * model.r).sum(axis=1)
    return P_pi, r_pi


def value_function(model, pi, check=True):
    """``V = r_pi + beta P_pi V`` by a direct solve."""
    if check:
        pi = check_policy(pi, model, tol=1e-9)
    P_pi, r_pi = policy_operator(model, pi)
    V = np.linalg.solve(np.eye(model.n_states) - model.beta * P_pi, r_pi)
    residual = np.abs(V - r_pi - model.beta * P_pi @ V).max()
    if residual > 1e-10 * max(1.0, np.abs(V).max()):
        raise RuntimeError(f"policy evaluation residual {residual:.2e}")
    return V


def q_values(model, pi, check=True):
    """``Q(s, a) = r(s, a) + beta sum_s' P(s, a, s') V(s')``."""
    V = value_function(model, pi, check)
    return model.r + model.beta * model.P @ V


def bellman_h(model, pi, Q):
    """``h(pi, Q)(s, a) = r(s, a) + beta sum_s' P(s, a, s') sum_a' pi(s', a') Q(s', a')``."""
    return model.r + model.beta * model.P @ (np.asarray(pi) * np.asarray(Q)).sum(axis=1)


def advantage(model, pi):
    """``Q^pi(s, a) - V^pi(s)``."""
    V = value_function(model, pi)
    return model.r + model.beta * model.P @ V - V[:, None]


def epsilon_greedy(policy_row, epsilon):
    """``pi (1 - A eps) + eps``; requires ``0 < eps < 1/A``."""
    row = np.asarray(policy_row, dtype=float)
    A = row.size
    if not 0.0 < epsilon < 1.0 / A:
        raise ConfigError(f"epsilon={epsilon} outside (0, 1/{A})")
    return row * (1.0 - A * epsilon) + epsilon


def floored_policy(pi, epsilon):
    pi = np.asarray(pi, dtype=float)
    A = pi.shape[1]
    if not 0.0 < epsilon < 1.0 / A:
        raise ConfigError(f"epsilon={epsilon} outside (0, 1/{A})")
    return pi * (1.0 - A * epsilon) + epsilon


@dataclass
class OptimalSolution:
    V: np.ndarray
    optimal_actions: list
    policy: np.ndarray
    iterations: int


def value_iteration(model, tol=1e-10, max_iter=100000):
    """Bellman fixed-point iteration until ``||TV - V||_inf <= tol (1 - beta)``.

    The stopping rule keeps ``||V - V*||_inf <= tol``.  ``policy`` is the
    lowest-index greedy policy; ``optimal_actions`` lists all greedy actions.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    V = np.zeros(model.n_states)
    for it in range(1, max_iter + 1):
        V_new = (model.r + model.beta * model.P @ V).max(axis=1)
        done = np.abs(V_new - V).max() <= tol * (1.0 - model.beta)
        V = V_new
        if done:
            break
    Q = model.r + model.beta * model.P @ V
    sets = [best_response(row, TIE_TOL) for row in Q]
    policy = np.zeros((model.n_states, model.n_actions))
    policy[np.arange(model.n_states), [s[0] for s in sets]] = 1.0
    return OptimalSolution(V, sets, policy, it)


def lyapunov_W(model, pi, V_star):
    """``sum_s V*(s) - V^pi(s)``."""
    return float(np.sum(np.asarray(V_star) - value_function(model, pi, check=False)))


def lyapunov_W_gradient(model, pi):
    """``dW/dpi(s', a) = -sum_s M[s, s'] Q^pi(s', a)`` with ``M = (I - beta P_pi)^-1``."""
    P_pi, r_pi = policy_operator(model, pi)
    M = np.linalg.inv(np.eye(model.n_states) - model.beta * P_pi)
    V = M @ r_pi
    Q = model.r + model.beta * model.P @ V
    return -(M.sum(axis=0)[:, None] * Q)


def policy_field(model, tie_tol=TIE_TOL):
    """Best-response dynamics ``b(Q^pi) - pi`` on flattened policies."""
    S, A = model.n_states, model.n_actions
    return BestResponseField(lambda x: q_values(model, x.reshape(S, A), check=False), S, A,
                             subtract_identity=True, tie_tol=tie_tol)


def policy_scaled_field(model, epsilon, tie_tol=TIE_TOL):
    """Policy field scaled by one box entry per state, shared by that state's actions."""
    S, A = model.n_states, model.n_actions
    return ScaledField(policy_field(model, tie_tol), OmegaBox(epsilon, S), np.repeat(np.arange(S), A))


def pair_kernel(model, epsilon):
    """Chain over visited pairs ``(s, a) -> (s', a')`` driven by a flattened policy."""
    S, A = model.n_states, model.n_actions

    def fn(x):
        pe = floored_policy(np.asarray(x, dtype=float).reshape(S, A), epsilon)
        return (model.P[:, :, :, None] * pe[None, None, :, :]).reshape(S * A, S * A)

    return FunctionKernel(fn)


def pair_family(model):
    return UpdateFamily.singletons(model.n_states * model.n_actions)


def eta_hat(model, epsilon, policies):
    """Minimum stationary pair mass over a list of policies."""
    flat = [np.asarray(p, dtype=float).ravel() for p in policies]
    return min_update_proportion(pair_kernel(model, epsilon), pair_family(model), flat)


def algorithm_step(model, Q, pi, s1, a1, s2, reward, nu, phi, gamma, mu, tie_tol=TIE_TOL,
                   tie_policy="lowest-index", rng=None):
    """One actor-critic update; returns ``(Q, pi, drift)``.

    ``nu`` (per state) and ``phi`` (per pair) already count the current visit.
    ``drift`` is the simplex deviation removed by renormalisation.
    """
    Q = np.array(Q, dtype=float)
    pi = np.array(pi, dtype=float)
    nu, phi = np.asarray(nu), np.asarray(phi)
    v_next = float(pi[s2] @ Q[s2])
    ties = best_response(Q[s1], tie_tol)
    b = ties[0] if tie_policy == "lowest-index" else ties[int(rng.integers(len(ties)))]
    target = np.zeros(model.n_actions)
    target[b] = 1.0
    q_old = Q[s1, a1]
    Q[s1, a1] = q_old + gamma(int(phi[s1, a1])) * (reward + model.beta * v_next - q_old)
    if mu is not None:
        pi[s1] += mu(int(nu[s1])) * (target - pi[s1])
    drift = abs(pi[s1].sum() - 1.0)
    if drift > 1e-9:
        pi[s1] /= pi[s1].sum()
    return Q, pi, drift


@dataclass
class LearnResult:
    Q: np.ndarray
    pi: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    ratio: np.ndarray
    checkpoints: np.ndarray
    policies: np.ndarray
    Qs: np.ndarray
    clamps: int
    meta: dict = dc_field(default_factory=dict)

    @property
    def pairs(self):
        """Updated pair index ``s * A + a`` at iterations ``1..N``."""
        return self.states[:-1] * self.Q.shape[1] + self.actions

    def pair_counts(self):
        """``phi_n(s, a)`` for ``n = 1..N`` as an ``(N, S*A)`` array."""
        SA = self.Q.size
        inc = np.zeros((self.pairs.size, SA), dtype=np.int32)
        inc[np.arange(self.pairs.size), self.pairs] = 1
        return np.cumsum(inc, axis=0)


def learn(model, n_steps, seed, epsilon=0.05, gamma=Schedule("power", 0.6),
          mu=Schedule("power", 1.0), checkpoint_every=1000, freeze_policy=False, pi0=None, Q0=None,
          tie_policy="lowest-index", tie_tol=TIE_TOL):
    """Run the actor-critic for ``n_steps`` iterations.

    ``states[n]`` is ``s_{n+1}`` and ``actions[n]`` is ``a_{n+1}``, so iteration
    ``n+1`` updates the pair ``(states[n], actions[n])`` using the observed
    next state ``states[n+1]``.  Checkpoints store ``pi_n`` and ``Q_n`` at
    every multiple of ``checkpoint_every`` (and at 0).  With
    ``freeze_policy`` the actor is skipped.
    """
    S, A = model.n_states, model.n_actions
    if not 0.0 < epsilon < 1.0 / A:
        raise ConfigError(f"epsilon={epsilon} outside (0, 1/{A})")
    if tie_policy not in ("lowest-index", "random"):
        raise ConfigError(f"unknown tie policy {tie_policy!r}")
    model.check_chain()
    n_steps = int(n_steps)
    streams = Streams(seed)
    u_act = streams["scheduler"].random(n_steps + 1).tolist()
    u_next = streams["transitions"].random(n_steps).tolist()
    noise = model.reward_noise.draw(streams["noise"], n_steps, 1)[:, 0]
    u_tie = streams["ties"].random(n_steps).tolist() if tie_policy == "random" else None
    s = int(streams["init"].integers(S))
    gtab = [0.0] + gamma.values(np.arange(1, n_steps + 1)).tolist()
    mtab = [0.0] + mu.values(np.arange(1, n_steps + 1)).tolist()

    cumP = np.cumsum(model.P, axis=2).tolist()
    r = model.r.tolist()
    beta = model.beta
    qmax = model.q_bound
    Q = [[0.0] * A for _ in range(S)] if Q0 is None else np.array(Q0, dtype=float).tolist()
    pi = [[1.0 / A] * A for _ in range(S)] if pi0 is None else check_policy(pi0, model, 1e-9).tolist()
    nu = [0] * S
    phi = [[0] * A for _ in range(S)]
    c = 1.0 - A * epsilon

    states = np.zeros(n_steps + 1, dtype=np.int64)
    actions = np.zeros(n_steps, dtype=np.int64)
    rewards = np.zeros(n_steps)
    ratio = np.zeros(n_steps + 1)
    n_ck = n_steps // checkpoint_every + 1
    ck_n = np.arange(n_ck) * checkpoint_every
    policies = np.zeros((n_ck, S, A))
    Qs = np.zeros((n_ck, S, A))
    policies[0], Qs[0] = pi, Q
    clamps = 0

    def draw_action(row, u):
        acc = 0.0
        for j in range(A):
            acc += row[j] * c + epsilon
            if u < acc:
                return j
        return A - 1

    a = draw_action(pi[s], u_act[0])
    for n in range(n_steps):
        states[n], actions[n] = s, a
        cp = cumP[s][a]
        u = u_next[n]
        s2 = S - 1
        for j in range(S):
            if u < cp[j]:
                s2 = j
                break
        R = r[s][a] + noise[n]
        rewards[n] = R
        qs, ps = Q[s], pi[s]
        q2, p2 = Q[s2], pi[s2]
        v2 = 0.0
        for j in range(A):
            v2 += p2[j] * q2[j]
        # best response from Q_n before the critic moves
        top = max(qs)
        if tie_policy == "lowest-index":
            best = next(j for j in range(A) if qs[j] >= top - tie_tol)
        else:
            ties = [j for j in range(A) if qs[j] >= top - tie_tol]
            best = ties[int(u_tie[n] * len(ties))]
        phi[s][a] += 1
        nu[s] += 1
        g = gtab[phi[s][a]]
        m = mtab[nu[s]]
        ratio[n + 1] = m / g
        q_new = qs[a] + g * (R + beta * v2 - qs[a])
        if q_new > qmax or q_new < -qmax:
            q_new = qmax if q_new > 0 else -qmax
            clamps += 1
        qs[a] = q_new
        if not freeze_policy:
            for j in range(A):
                ps[j] += m * ((1.0 if j == best else 0.0) - ps[j])
        s = s2
        a = draw_action(pi[s], u_act[n + 1])
        if (n + 1) % checkpoint_every == 0:
            k = (n + 1) // checkpoint_every
            policies[k], Qs[k] = pi, Q
    states[n_steps] = s
    return LearnResult(np.array(Q), np.array(pi), states, actions, rewards, ratio, ck_n, policies, Qs,
                       clamps, {"seed": int(seed), "epsilon": epsilon, "freeze_policy": freeze_policy})


def checkpoint_metrics(model, result, V_star):
    """Per-checkpoint ``(n, W(pi_n), max_s |V^pi_n - V*|, ||Q_n - Q^pi_n||_inf)``."""
    rows = []
    for n, pi, Q in zip(result.checkpoints, result.policies, result.Qs):
        V = value_function(model, pi, check=False)
        Qpi = model.r + model.beta * model.P @ V
        rows.append((int(n), float(np.sum(V_star - V)), float(np.abs(V - V_star).max()),
                     float(np.abs(Q - Qpi).max())))
    return np.array(rows)


def write_checkpoints(path, metrics):
    with open(path, "w") as fh:
        fh.write("n,W,max_value_gap,tracking_error\n")
        for n, w, gap, tr in metrics:
            fh.write(f"{int(n)},{w:.17g},{gap:.17g},{tr:.17g}\n")
