"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def stacked_blocks(system, T):
    blocks, M = [], np.array(system.C)
    for _ in range(T):
        blocks.append(M)
        M = M @ system.A
    return np.stack(blocks)  # (T, p, n)


def l0_oracle(system, Y, rtol=1e-7):
    """Exhaustive minimal-support search.

    Returns ``(size, fits)`` where fits lists ``(K, x, injective)`` for every
    support of the minimal size that explains Y exactly.
    """
    Y = np.asarray(Y, dtype=float)
    p, T = Y.shape
    n = system.n
    O3 = stacked_blocks(system, T)
    for k in range(p + 1):
        fits = []
        for K in itertools.combinations(range(p), k):
            keep = [i for i in range(p) if i not in K]
            if not keep:
                fits.append((K, np.zeros(n), False))
                continue
            M = O3[:, keep, :].reshape(-1, n)
            b = Y[keep].T.reshape(-1)
            x = np.linalg.lstsq(M, b, rcond=None)[0]
            if np.linalg.norm(M @ x - b) <= rtol * max(1.0, np.linalg.norm(b)):
                fits.append((K, x, np.linalg.matrix_rank(M) == n))
        if fits:
            return k, fits
    raise AssertionError("unreachable: removing every sensor always fits")


def response_matrix(system, T):
    """Outputs and states as linear functions of (x0, w(0..T-2)), built by simulating unit inputs."""
    from secest.model import AttackScenario, simulate

    n, m, p = system.n, system.m, system.p
    nv = n + m * (T - 1)
    Ycols, Xcols = [], []
    for k in range(nv):
        v = np.zeros(nv)
        v[k] = 1.0
        W = v[n:].reshape(T - 1, m).T
        traj, meas = simulate(system, v[:n],
                              attack=AttackScenario(set(), set(range(m)), np.zeros((p, T)), W))
        Ycols.append(meas.Y.T.reshape(-1))
        Xcols.append(traj.X.T.reshape(-1))
    return np.array(Ycols).T, np.array(Xcols).T


def actuator_pattern_oracle(system, Y, rtol=1e-7):
    """Minimal (|K| + |L|) patterns that explain Y exactly, with the implied state sequences.

    Each fit is ``(K, L, X, unique)``; ``unique`` is False when the pattern leaves
    the state sequence undetermined.
    """
    Y = np.asarray(Y, dtype=float)
    p, T = Y.shape
    n, m = system.n, system.m
    H, S = response_matrix(system, T)
    y = Y.T.reshape(-1)
    for total in range(p + m + 1):
        fits = []
        for nl in range(min(m, total) + 1):
            for L in itertools.combinations(range(m), nl):
                for K in itertools.combinations(range(p), total - nl):
                    rows = [t * p + i for t in range(T) for i in range(p) if i not in K]
                    cols = list(range(n)) + [n + s * m + j for s in range(T - 1) for j in L]
                    M = H[np.ix_(rows, cols)]
                    v = np.linalg.lstsq(M, y[rows], rcond=None)[0]
                    if np.linalg.norm(M @ v - y[rows]) > rtol * max(1.0, np.linalg.norm(y[rows])):
                        continue
                    _, sv, Vt = np.linalg.svd(M)
                    rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if sv.size else 1.0)))
                    N = Vt[rank:].T
                    unique = N.shape[1] == 0 or np.allclose(S[:, cols] @ N, 0, atol=1e-8)
                    X = (S[:, cols] @ v).reshape(T, n).T
                    fits.append((K, L, X, unique))
        if fits:
            return total, fits
    raise AssertionError("unreachable")
