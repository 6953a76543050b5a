"""How many attacked sensors/actuators a system tolerates, with witnesses.

All exact tests reduce to rank/kernel computations on observability-type
matrices restricted to the unattacked sensors, enumerated over attack sets in
increasing cardinality and lexicographic order within a cardinality.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np

from secest._linalg import (
    check_cost,
    least_singular_vector,
    null_space,
    support,
)
from secest.errors import PreconditionError
from secest.model import markov_blocks, phi_map
from secest.solver import group_norms, parse_norm


@dataclass(frozen=True)
class ResilienceReport:
    q_max: int
    s_min: int
    certificate: np.ndarray
    T: int
    witness_set: tuple = ()

    def to_dict(self):
        return {
            "q_max": self.q_max,
            "s_min": self.s_min,
            "horizon": self.T,
            "witness_set": [i + 1 for i in self.witness_set],
            "certificate": None if self.certificate is None else self.certificate.tolist(),
        }


@dataclass(frozen=True)
class AttackPattern:
    K: tuple
    L: tuple


@dataclass(frozen=True)
class NullspaceVerdict:
    """Outcome of a randomized search for violations of the l1/lr nullspace condition.

    ``falsified=False`` only means no violation was found.
    """

    falsified: bool
    certificate: np.ndarray = None
    K: tuple = ()
    ratio: float = 0.0
    directions_tested: int = 0

    @property
    def verdict(self):
        return "falsified" if self.falsified else "no-violation-found"


def _stack3(system, T):
    return np.stack(markov_blocks(system, T))  # (T, p, n)


def _restricted(O3, removed):
    keep = np.setdiff1d(np.arange(O3.shape[1]), removed)
    return O3[:, keep, :].reshape(-1, O3.shape[2])


def _kernel_vector(M, n):
    N = null_space(M, n)
    if N.shape[1] == 0:
        return None
    z = N[:, 0].real
    return z / np.linalg.norm(z)


def ceil_half_minus_one(s):
    return math.ceil(s / 2 - 1)


def _first_kernel(O3, sets, batch=4096):
    """First set in ``sets`` whose removal leaves a nontrivial kernel, with its vector.

    Per-sensor Gram matrices give a cheap batched screen: any set the SVD rank
    test would call singular has a Gram eigenvalue far below the screening
    threshold, which sits well above the rounding error of the subtraction.
    Flagged sets are confirmed with the SVD rank test.
    """
    n = O3.shape[2]
    G = np.einsum("tpi,tpj->pij", O3, O3)
    Gtot = G.sum(axis=0)
    scale = np.linalg.norm(Gtot, 2)
    screen = 1e-11 * scale
    while True:
        chunk = list(itertools.islice(sets, batch))
        if not chunk:
            return None, None
        if len(chunk[0]) == 0:
            lam = np.linalg.eigvalsh(Gtot)[None, :1]
        else:
            idx = np.array(chunk, dtype=int)
            lam = np.linalg.eigvalsh(Gtot - G[idx].sum(axis=1))[:, :1]
        for j in np.flatnonzero(lam[:, 0] <= screen):
            z = _kernel_vector(_restricted(O3, list(chunk[j])), n)
            if z is not None:
                return chunk[j], z


def _attackable(p, protected):
    protected = set(protected)
    if not protected <= set(range(p)):
        raise ValueError("protected sensors out of range")
    return [i for i in range(p) if i not in protected]


def is_sensor_correctable(system, T, q, force=False, protected=()):
    """Exact test that q attacked sensors are correctable after T steps.

    ``protected`` lists sensors known never to be attacked.  Returns
    ``(correctable, certificate)``; on failure the certificate is a unit vector
    z whose output rows over the horizon touch at most 2q attackable sensors.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    cand = _attackable(system.p, protected)
    O3 = _stack3(system, T)
    k = min(2 * q, len(cand))
    check_cost(math.comb(len(cand), k), force)
    sets = (tuple(cand[i] for i in K) for K in itertools.combinations(range(len(cand)), k))
    K, z = _first_kernel(O3, sets)
    return (True, None) if K is None else (False, z)


def max_correctable_sensor_errors(system, T, force=False, protected=()):
    """Smallest kernel-inducing sensor set s_min and q_max = ceil(s_min/2 - 1).

    With ``protected`` sensors excluded from attack sets, s_min may be
    undefined when even removing every attackable sensor leaves the state
    observable; s_min is then reported as the number of attackable sensors + 1.
    """
    p, n = system.p, system.n
    cand = _attackable(p, protected)
    O3 = _stack3(system, T)
    # with fewer than ceil(n/T) surviving sensors the stack is too short to be injective
    upper = min(len(cand), p - math.ceil(n / T) + 1)
    spent = 0
    for k in range(upper + 1):
        # the search usually stops early, so guard each cardinality as it is reached
        spent += math.comb(len(cand), k)
        check_cost(spent, force)
        sets = (tuple(cand[i] for i in K) for K in itertools.combinations(range(len(cand)), k))
        K, z = _first_kernel(O3, sets)
        if K is not None:
            q_max = -1 if k == 0 else ceil_half_minus_one(k)
            return ResilienceReport(q_max, k, z, int(T), K)
    k = len(cand) + 1
    return ResilienceReport(ceil_half_minus_one(k), k, None, int(T), ())


def eigenvector_criterion(system, q, rtol=1e-8):
    """Eigenvector test for q-correctability after n steps.

    Requires eigenvalues of A with pairwise distinct magnitudes.
    """
    lam, V = np.linalg.eig(system.A)
    mags = np.sort(np.abs(lam))
    gaps = np.diff(mags)
    if gaps.size and np.min(gaps) <= rtol * max(1.0, mags[-1]):
        raise PreconditionError("eigenvalues of A do not have pairwise distinct magnitudes")
    for j in range(V.shape[1]):
        if support(system.C @ V[:, j]).size <= 2 * q:
            return False
    return True


def stacked_input_map(system, T):
    """M_T * blockdiag(B): response of outputs to w(0..T-2), time-major rows."""
    p, m = system.p, system.m
    blocks = markov_blocks(system, T)
    CB = [Ck @ system.B for Ck in blocks]
    M = np.zeros((p * T, m * (T - 1)))
    for t in range(1, T):
        for s in range(t):
            M[t * p:(t + 1) * p, s * m:(s + 1) * m] = CB[t - 1 - s]
    return M


def _pattern_matrix(O, MB, p, m, T, K, L):
    cols = [O]
    if L and T > 1:
        idx = [s * m + j for s in range(T - 1) for j in L]
        cols.append(MB[:, idx])
    if K:
        I = np.zeros((p * T, len(K) * T))
        c = 0
        for t in range(T):
            for i in K:
                I[t * p + i, c] = 1.0
                c += 1
        cols.append(I)
    return np.hstack(cols)


def attack_patterns(p, m, total):
    """(K, L) pairs with |K| + |L| = total, by |L| then lexicographic."""
    for nl in range(0, min(m, total) + 1):
        nk = total - nl
        if nk > p:
            continue
        for L in itertools.combinations(range(m), nl):
            for K in itertools.combinations(range(p), nk):
                yield K, L


def is_resilient_with_actuators(system, T, q, force=False):
    """Test that q combined sensor/actuator attacks are correctable after T steps.

    A pattern (K, L) fails when the kernel of [O_T | M_T B_L | I_K] contains a
    vector whose state part or actuator image B w is nonzero.  Returns
    ``(resilient, certificate)`` with the certificate a dict of the offending
    pattern and kernel vector parts.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    p, m, n = system.p, system.m, system.n
    total = min(2 * q, p + m)
    n_patterns = sum(math.comb(m, nl) * math.comb(p, total - nl)
                     for nl in range(0, min(m, total) + 1) if total - nl <= p)
    check_cost(n_patterns, force, "pattern rank tests")
    O = np.vstack(markov_blocks(system, T))
    MB = stacked_input_map(system, T)
    bscale = 1.0 + np.linalg.norm(system.B)
    for K, L in attack_patterns(p, m, total):
        S = _pattern_matrix(O, MB, p, m, T, K, L)
        N = null_space(S)
        if N.shape[1] == 0:
            continue
        nw = len(L) * (T - 1) if T > 1 else 0
        X = N[:n]
        Wp = N[n:n + nw]
        BW = np.zeros((n * max(T - 1, 0), N.shape[1]))
        if nw:
            BL = system.B[:, list(L)]
            for s in range(T - 1):
                BW[s * n:(s + 1) * n] = BL @ Wp[s * len(L):(s + 1) * len(L)]
        img = np.vstack([X, BW])
        if np.max(np.abs(img)) > 1e-8 * bscale:
            j = int(np.argmax(np.max(np.abs(img), axis=0)))
            v = N[:, j]
            return False, {
                "K": K,
                "L": L,
                "x": v[:n],
                "w": v[n:n + nw],
                "e": v[n + nw:],
            }
    return True, None


def _nsp_violation(G, q, r):
    norms = group_norms(G, r)
    total = norms.sum()
    if total <= 1e-12:
        return True, tuple(range(q)), math.inf
    order = np.argsort(-norms, kind="stable")
    top = norms[order[:q]].sum()
    rest = total - top
    ratio = math.inf if rest <= 0 else top / rest
    return top >= rest - 1e-12 * total, tuple(sorted(order[:q].tolist())), ratio


def nullspace_falsifier(system, T, q, r=2, trials=100, seed=0, max_subsets=500,
                        refine_steps=20):
    """Search for z with sum of the q largest row norms of Phi z >= the rest.

    Candidate directions: Gaussian draws (each refined by a short random local
    search on the top/rest ratio), real and imaginary parts of eigenvectors of A,
    and least-singular directions of the 2q-restricted stacked matrices.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    r = parse_norm(r)
    n, p = system.n, system.p
    rng = np.random.default_rng(seed)
    tested = 0

    def check(z):
        nonlocal tested
        tested += 1
        z = np.asarray(z, dtype=float)
        nz = np.linalg.norm(z)
        if nz == 0:
            return None
        z = z / nz
        G = phi_map(system, T, z)
        bad, K, ratio = _nsp_violation(G, q, r)
        return (z, K, ratio) if bad else None

    if q == 0:
        # condition reads 0 < sum of all row norms: fails only on unobservable directions
        O = np.vstack(markov_blocks(system, T))
        N = null_space(O, n)
        if N.shape[1]:
            return NullspaceVerdict(True, N[:, 0], (), math.inf, 1)
        return NullspaceVerdict(False, directions_tested=1)

    structured = []
    _, V = np.linalg.eig(system.A)
    for j in range(n):
        structured.append(V[:, j].real)
        if np.any(np.abs(V[:, j].imag) > 0):
            structured.append(V[:, j].imag)
    k = 2 * q
    if k < p:
        O3 = _stack3(system, T)
        total = math.comb(p, k)
        if total <= max_subsets:
            sets = itertools.combinations(range(p), k)
        else:
            sets = (tuple(sorted(rng.choice(p, k, replace=False))) for _ in range(max_subsets))
        for K in sets:
            structured.append(least_singular_vector(_restricted(O3, list(K))))
    else:
        structured.append(np.eye(n)[0])

    for z in structured:
        hit = check(z)
        if hit:
            return NullspaceVerdict(True, hit[0], hit[1], hit[2], tested)

    for _ in range(trials):
        z = rng.standard_normal(n)
        hit = check(z)
        if hit:
            return NullspaceVerdict(True, hit[0], hit[1], hit[2], tested)
        best = _nsp_violation(phi_map(system, T, z / np.linalg.norm(z)), q, r)[2]
        step = 0.5
        for _ in range(refine_steps):
            cand = z / np.linalg.norm(z) + step * rng.standard_normal(n)
            hit = check(cand)
            if hit:
                return NullspaceVerdict(True, hit[0], hit[1], hit[2], tested)
            ratio = _nsp_violation(phi_map(system, T, cand / np.linalg.norm(cand)), q, r)[2]
            if ratio > best:
                z, best = cand, ratio
            else:
                step *= 0.7
    return NullspaceVerdict(False, directions_tested=tested)
