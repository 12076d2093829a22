"""Independent reference computations used to cross-check the package.

Nothing here imports the code under test.
"""
import numpy as np


def stationary_eig(P):
    """Left Perron eigenvector of a row-stochastic matrix."""
    w, v = np.linalg.eig(np.asarray(P, dtype=float).T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


def policy_value_series(P, r, beta, pi, tol=1e-13):
    """Policy value by summing the discounted series ``sum_t beta^t P_pi^t r_pi``."""
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = (pi * r).sum(axis=1)
    V = np.zeros(len(r_pi))
    term = r_pi.copy()
    while np.abs(term).max() > tol:
        V += term
        term = beta * P_pi @ term
    return V + term


def optimal_by_policy_enumeration(P, r, beta):
    """``V*`` as the pointwise max over every deterministic policy."""
    S, A = r.shape
    best = np.full(S, -np.inf)
    for code in range(A ** S):
        acts = [(code // A ** s) % A for s in range(S)]
        pi = np.zeros((S, A))
        pi[np.arange(S), acts] = 1.0
        P_pi = P[np.arange(S), acts]
        V = np.linalg.solve(np.eye(S) - beta * P_pi, r[np.arange(S), acts])
        best = np.maximum(best, V)
    return best


def scalar_linear_recursion(x0, steps):
    """``x <- x + a_k (-x)`` for a list of step sizes."""
    x = float(x0)
    for a in steps:
        x = x + a * (-x)
    return x
