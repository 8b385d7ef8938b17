"""Compiled inner loops for the event-driven simulation.

Rate-table layout (N+1 leaves): leaf 0 is the left reservoir at site 1, leaf k
(1 <= k <= N-1) is the bond between sites k and k+1, leaf N is the right
reservoir at site N.  Sites are 0-based in arrays here.
"""
from __future__ import annotations

import numba as nb
import numpy as np

STATUS_STOP = 0
STATUS_BUDGET = 1
STATUS_ABSORBING = 2


@nb.njit(cache=True, nogil=True)
def tree_capacity(n_leaves):
    P = 1
    while P < n_leaves:
        P *= 2
    return P


@nb.njit(cache=True, nogil=True)
def tree_set(tree, P, leaf, value):
    j = leaf + P
    tree[j] = value
    j >>= 1
    while j >= 1:
        tree[j] = tree[2 * j] + tree[2 * j + 1]
        j >>= 1


@nb.njit(cache=True, nogil=True)
def tree_rebuild(tree, P):
    for j in range(P - 1, 0, -1):
        tree[j] = tree[2 * j] + tree[2 * j + 1]


@nb.njit(cache=True, nogil=True)
def tree_find(tree, P, u):
    """Leaf whose cumulative interval contains u, 0 <= u < tree[1]."""
    j = 1
    while j < P:
        left = tree[2 * j]
        if u < left:
            j = 2 * j
        else:
            u -= left
            j = 2 * j + 1
    return j - P


@nb.njit(cache=True, nogil=True)
def bond_rate(eta, k, D, p, sigma):
    a = eta[k - 1]
    b = eta[k]
    if a == b:
        return 0.0
    if a == 1:
        return D * (sigma + p)
    return D * sigma


@nb.njit(cache=True, nogil=True)
def left_rate(eta, D, st, alpha, gamma):
    if eta[0] == 0:
        return D * st * alpha
    return D * st * gamma


@nb.njit(cache=True, nogil=True)
def right_rate(eta, D, st, beta, delta):
    if eta[eta.shape[0] - 1] == 0:
        return D * st * delta
    return D * st * beta


@nb.njit(cache=True, nogil=True)
def fill_tree(tree, P, eta, D, p, sigma, st, alpha, beta, gamma, delta):
    N = eta.shape[0]
    tree[:] = 0.0
    tree[P] = left_rate(eta, D, st, alpha, gamma)
    for k in range(1, N):
        tree[P + k] = bond_rate(eta, k, D, p, sigma)
    tree[P + N] = right_rate(eta, D, st, beta, delta)
    tree_rebuild(tree, P)


@nb.njit(cache=True, nogil=True)
def _touch(occ, last, eta, i, t):
    occ[i] += eta[i] * (t - last[i])
    last[i] = t


@nb.njit(cache=True, nogil=True)
def apply_event(leaf, eta, tree, P, t, D, p, sigma, st, alpha, beta, gamma, delta,
                h_plus, h_minus, occ, last):
    N = eta.shape[0]
    if leaf == 0:
        _touch(occ, last, eta, 0, t)
        if eta[0] == 0:
            h_plus[0] += 1
        else:
            h_minus[0] += 1
        eta[0] = 1 - eta[0]
        tree_set(tree, P, 0, left_rate(eta, D, st, alpha, gamma))
        tree_set(tree, P, 1, bond_rate(eta, 1, D, p, sigma))
    elif leaf == N:
        _touch(occ, last, eta, N - 1, t)
        if eta[N - 1] == 1:
            h_plus[N] += 1
        else:
            h_minus[N] += 1
        eta[N - 1] = 1 - eta[N - 1]
        tree_set(tree, P, N, right_rate(eta, D, st, beta, delta))
        tree_set(tree, P, N - 1, bond_rate(eta, N - 1, D, p, sigma))
    else:
        k = leaf
        _touch(occ, last, eta, k - 1, t)
        _touch(occ, last, eta, k, t)
        if eta[k - 1] == 1:
            h_plus[k] += 1
        else:
            h_minus[k] += 1
        tmp = eta[k - 1]
        eta[k - 1] = eta[k]
        eta[k] = tmp
        tree_set(tree, P, k, bond_rate(eta, k, D, p, sigma))
        if k > 1:
            tree_set(tree, P, k - 1, bond_rate(eta, k - 1, D, p, sigma))
        else:
            tree_set(tree, P, 0, left_rate(eta, D, st, alpha, gamma))
        if k < N - 1:
            tree_set(tree, P, k + 1, bond_rate(eta, k + 1, D, p, sigma))
        else:
            tree_set(tree, P, N, right_rate(eta, D, st, beta, delta))


@nb.njit(cache=True, nogil=True)
def advance(eta, tree, P, rng, t, t_stop, D, p, sigma, st, alpha, beta, gamma, delta,
            h_plus, h_minus, occ, last, budget):
    """Fire events until the next waiting time would cross ``t_stop``.

    Exponential clocks are simply discarded at ``t_stop``: by memorylessness the
    restarted chain has the same law, which keeps piecewise-constant schedules
    exact.  Returns (t, n_events, status, last_leaf).
    """
    n = 0
    last_leaf = -1
    while True:
        if n >= budget:
            return t, n, STATUS_BUDGET, last_leaf
        total = tree[1]
        if total <= 0.0:
            return t, n, STATUS_ABSORBING, last_leaf
        wait = rng.exponential(1.0) / total
        if t + wait >= t_stop:
            return t_stop, n, STATUS_STOP, last_leaf
        t += wait
        leaf = tree_find(tree, P, rng.random() * total)
        while tree[P + leaf] <= 0.0:
            # rounding landed on an empty leaf; redraw
            leaf = tree_find(tree, P, rng.random() * total)
        apply_event(leaf, eta, tree, P, t, D, p, sigma, st, alpha, beta, gamma, delta,
                    h_plus, h_minus, occ, last)
        last_leaf = leaf
        n += 1


def new_tree(N: int) -> tuple[np.ndarray, int]:
    P = int(tree_capacity(N + 1))
    return np.zeros(2 * P, dtype=np.float64), P
