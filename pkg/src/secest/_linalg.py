"""Small numerical helpers shared by the analysis and decoding modules."""

import itertools
import math
import warnings

import numpy as np

from secest.errors import CostLimitError

SUPPORT_RTOL = 1e-9
MAX_SUBSET_TESTS = 10**7


def support_threshold(block, rtol=SUPPORT_RTOL):
    """Magnitude above which an entry of ``block`` counts as nonzero."""
    block = np.asarray(block)
    scale = float(np.max(np.abs(block))) if block.size else 0.0
    return rtol * max(1.0, scale)


def support(v, tol=None):
    """Indices of the numerically nonzero entries of a vector."""
    v = np.asarray(v)
    if tol is None:
        tol = support_threshold(v)
    return np.flatnonzero(np.abs(v) > tol)


def row_support(M, tol=None):
    """Indices of the numerically nonzero rows of a matrix."""
    M = np.atleast_2d(np.asarray(M))
    if tol is None:
        tol = support_threshold(M)
    return np.flatnonzero(np.max(np.abs(M), axis=1) > tol) if M.shape[1] else np.array([], int)


def rank_tol(s, shape):
    """SVD rank tolerance max(rows, cols) * eps * sigma_max."""
    if s.size == 0:
        return 0.0
    return max(shape) * np.finfo(float).eps * s[0]


def numerical_rank(M):
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_tol(s, M.shape)))


def null_space(M, ncols=None):
    """Orthonormal basis (as columns) of the numerical kernel of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if ncols is None:
        ncols = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(ncols)
    _, s, vh = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > rank_tol(s, M.shape)))
    return vh[r:].conj().T


def least_singular_vector(M):
    """Right singular vector of the smallest singular value (kernel-adjacent direction)."""
    M = np.atleast_2d(M)
    if M.shape[0] == 0:
        v = np.zeros(M.shape[1])
        v[0] = 1.0
        return v
    _, _, vh = np.linalg.svd(M, full_matrices=True)
    return vh[-1]


def subsets(p, k):
    """Size-``k`` subsets of range(p) in lexicographic order."""
    return itertools.combinations(range(p), k)


def check_cost(n_tests, force=False, what="subset rank tests"):
    """Guard combinatorial enumerations against runaway cost."""
    if n_tests > MAX_SUBSET_TESTS:
        msg = f"estimated {n_tests:.3g} {what} exceeds {MAX_SUBSET_TESTS:.0e}"
        if not force:
            raise CostLimitError(msg + "; pass force=True (--force) to proceed")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def count_subsets(p, sizes):
    return sum(math.comb(p, k) for k in sizes if 0 <= k <= p)
