"""Independent brute-force oracles used by the tests (dense numpy, no solver code)."""

import itertools

import numpy as np


def policy_values(n, rows, choice):
    """``rows`` maps state -> list of (reward, {succ: prob}); states without rows absorb.

    Exact values of a deterministic policy; ``choice`` maps state -> action index."""
    A = np.eye(n)
    b = np.zeros(n)
    for s, acts in rows.items():
        r, dist = acts[choice[s]]
        b[s] = r
        for t, p in dist.items():
            A[s, t] -= p
    return np.linalg.solve(A, b)


def brute_force_max(n, rows, initial):
    """Maximum over all deterministic stationary policies of the expected total reward.

    Policies with a singular system (runs that never stop) are skipped.
    """
    states = sorted(rows)
    best = -np.inf
    for combo in itertools.product(*[range(len(rows[s])) for s in states]):
        choice = dict(zip(states, combo))
        A = np.eye(n)
        for s in states:
            for t, p in rows[s][choice[s]][1].items():
                A[s, t] -= p
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = policy_values(n, rows, choice)
        best = max(best, v[initial])
    return best


def visits(P, initial):
    """Expected visits for a substochastic transient block plus absorbing inflow."""
    P = np.asarray(P, dtype=float)
    n = len(P)
    absorbing = P.sum(axis=1) == 0
    T = np.flatnonzero(~absorbing)
    N = np.linalg.inv(np.eye(len(T)) - P[np.ix_(T, T)])
    xi = np.zeros(n)
    e = np.zeros(len(T))
    if initial in T:
        e[list(T).index(initial)] = 1.0
    xi[T] = e @ N
    for a in np.flatnonzero(absorbing):
        xi[a] = xi[T] @ P[T, a] + (1.0 if a == initial else 0.0)
    return xi
