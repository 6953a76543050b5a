import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secest.errors import CostLimitError, PreconditionError
from secest.model import LinearSystem, observability_matrix
from secest.resilience import (
    eigenvector_criterion,
    is_resilient_with_actuators,
    is_sensor_correctable,
    max_correctable_sensor_errors,
    nullspace_falsifier,
)
from conftest import brute_force_q_max, circular_permutation


def random_autonomous(seed, n, p, sparsity=0.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    C = rng.standard_normal((p, n))
    if sparsity:
        C[rng.random((p, n)) < sparsity] = 0.0
    return LinearSystem.autonomous(A, C)


def removal_keeps_rank(system, T, k):
    """Oracle: every removal of exactly k sensors leaves the stacked map injective."""
    n, p = system.n, system.p
    O = observability_matrix(system, T).reshape(T, p, n)
    for K in itertools.combinations(range(p), k):
        keep = [i for i in range(p) if i not in K]
        if not keep or np.linalg.matrix_rank(O[:, keep, :].reshape(-1, n)) < n:
            return False
    return True


def test_unobservable_corrects_nothing():
    sys = LinearSystem.autonomous(np.eye(2), [[1.0, 0.0]])
    ok, z = is_sensor_correctable(sys, 3, 0)
    assert not ok
    np.testing.assert_allclose(np.abs(z), [0, 1], atol=1e-12)
    assert max_correctable_sensor_errors(sys, 3).q_max == -1


def test_circular_permutation_n4():
    sys = circular_permutation(4)
    assert is_sensor_correctable(sys, 4, 1)[0]
    assert not is_sensor_correctable(sys, 4, 2)[0]


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_circular_permutation_is_maximal(n):
    rep = max_correctable_sensor_errors(circular_permutation(n), n)
    assert rep.s_min == n
    assert rep.q_max == math.ceil(n / 2 - 1)


def test_decoupled_identity():
    rep = max_correctable_sensor_errors(LinearSystem.autonomous(np.eye(3), np.eye(3)), 5)
    assert rep.s_min == 1 and rep.q_max == 0
    assert rep.witness_set == (0,)


@pytest.mark.parametrize("seed", range(6))
def test_random_3x3_matches_subset_oracle(seed):
    sys = random_autonomous(seed, 3, 3, sparsity=0.4)
    for q in (0, 1):
        assert is_sensor_correctable(sys, 3, q)[0] == removal_keeps_rank(sys, 3, min(2 * q, 3))


@pytest.mark.parametrize("seed", range(8))
def test_random_4x3_matches_enumeration(seed):
    sys = random_autonomous(seed, 3, 4, sparsity=0.5)
    for T in (1, 2, 3):
        assert max_correctable_sensor_errors(sys, T).q_max == brute_force_q_max(sys, T)


def test_certificate_lies_in_restricted_kernel():
    sys = circular_permutation(4)
    ok, z = is_sensor_correctable(sys, 4, 2)
    assert not ok
    P = (observability_matrix(sys, 4) @ z).reshape(4, 4).T
    assert np.sum(np.any(np.abs(P) > 1e-9, axis=1)) <= 4
    rep = max_correctable_sensor_errors(sys, 4)
    P = (observability_matrix(sys, 4) @ rep.certificate).reshape(4, 4).T
    off = [i for i in range(4) if i not in rep.witness_set]
    assert np.allclose(P[off], 0, atol=1e-10)


def test_protected_sensors_shrink_attack_sets():
    sys = LinearSystem.autonomous(np.eye(2), [[1, 0], [0, 1], [1, 1]])
    assert max_correctable_sensor_errors(sys, 2).q_max == 0
    assert is_sensor_correctable(sys, 2, 1, protected=[2])[0] is False
    rep = max_correctable_sensor_errors(sys, 2, protected=[0, 1])
    assert rep.certificate is None and rep.s_min == 2


def test_cost_guard():
    sys = random_autonomous(0, 2, 40)
    with pytest.raises(CostLimitError):
        is_sensor_correctable(sys, 2, 10)


def test_eigenvector_criterion_examples():
    A = np.diag([0.9, 0.5])
    assert eigenvector_criterion(LinearSystem.autonomous(A, [[1, 1], [1, -1]]), 0)
    assert not eigenvector_criterion(LinearSystem.autonomous(A, np.eye(2)), 1)
    with pytest.raises(PreconditionError):
        eigenvector_criterion(LinearSystem.autonomous(np.diag([0.5, -0.5]), np.eye(2)), 0)


@pytest.mark.parametrize("seed", range(5))
def test_eigenvector_criterion_agrees_with_rank_test(seed):
    rng = np.random.default_rng(seed)
    n, p = 4, 5
    V = rng.standard_normal((n, n))
    A = V @ np.diag([0.95, -0.7, 0.4, 0.15]) @ np.linalg.inv(V)
    # zero some entries of C V so eigenvector supports vary
    CV = rng.standard_normal((p, n))
    CV[rng.random((p, n)) < 0.35] = 0.0
    sys = LinearSystem.autonomous(A, CV @ np.linalg.inv(V))
    for q in range(3):
        assert eigenvector_criterion(sys, q) == is_sensor_correctable(sys, n, q)[0]


def test_actuators_absent_reduces_to_sensor_test():
    for seed in range(4):
        sys = random_autonomous(seed, 3, 4, sparsity=0.4)
        for q in range(3):
            assert is_resilient_with_actuators(sys, 3, q)[0] == is_sensor_correctable(sys, 3, q)[0]


def test_zero_input_matrix_has_no_actuator_effect():
    for seed in range(4):
        base = random_autonomous(seed, 3, 4, sparsity=0.3)
        sys = LinearSystem(base.A, np.zeros((3, 2)), base.C)
        for q in range(3):
            # with B = 0 the worst split spends the whole budget on sensors
            assert is_resilient_with_actuators(sys, 3, q)[0] == is_sensor_correctable(sys, 3, q)[0]


def test_generic_actuator_resilience():
    rng = np.random.default_rng(7)
    sys = LinearSystem(rng.standard_normal((4, 4)), rng.standard_normal((4, 2)),
                       rng.standard_normal((5, 4)))
    assert is_resilient_with_actuators(sys, 4, 2)[0]
    ok, cert = is_resilient_with_actuators(sys, 4, 3)
    assert not ok and len(cert["K"]) + len(cert["L"]) == 6


def test_falsifier_examples():
    sys = circular_permutation(6)
    for q in (1, 2):
        assert not nullspace_falsifier(sys, 6, q, r=2, trials=20).falsified
        assert not nullspace_falsifier(sys, 6, q, r="inf", trials=20).falsified
    for seed in range(3):
        rnd = random_autonomous(seed, 3, 5)
        assert nullspace_falsifier(rnd, 3, 3, trials=5, seed=seed).falsified


def test_falsifier_uses_l0_certificate():
    sys = LinearSystem.autonomous(np.diag([0.9, 0.5, 0.2]), [[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]])
    assert not is_sensor_correctable(sys, 3, 1)[0]
    v = nullspace_falsifier(sys, 3, 1, r=2, trials=3)
    assert v.falsified and v.verdict == "falsified"


small = st.tuples(st.integers(0, 10**6), st.integers(2, 3), st.integers(2, 6))


@settings(max_examples=40, deadline=None)
@given(small)
def test_monotone_in_q_and_bounded(args):
    seed, n, p = args
    sys = random_autonomous(seed, n, p, sparsity=0.4)
    T = n
    answers = [is_sensor_correctable(sys, T, q)[0] for q in range(p)]
    # once false, false forever
    assert all(not b for b in answers[answers.index(False):]) if False in answers else True
    rep = max_correctable_sensor_errors(sys, T)
    assert rep.q_max <= math.ceil(p / 2 - 1)
    # q_max is the largest q the exact test accepts
    assert rep.q_max == (answers.index(False) - 1 if False in answers else p - 1)


@settings(max_examples=30, deadline=None)
@given(small)
def test_horizon_monotone_and_constant_after_n(args):
    seed, n, p = args
    sys = random_autonomous(seed, n, p, sparsity=0.5)
    qs = [max_correctable_sensor_errors(sys, T).q_max for T in range(1, n + 3)]
    assert all(a <= b for a, b in zip(qs, qs[1:]))
    assert len(set(qs[n - 1:])) == 1


@settings(max_examples=25, deadline=None)
@given(small)
def test_l1_condition_implies_l0(args):
    seed, n, p = args
    sys = random_autonomous(seed, n, p, sparsity=0.4)
    for q in range(1, (p + 1) // 2):
        if not is_sensor_correctable(sys, n, q)[0]:
            assert nullspace_falsifier(sys, n, q, trials=2, seed=seed).falsified


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_actuator_resilience_implies_sensor(seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((4, 3))
    C[rng.random((4, 3)) < 0.4] = 0
    sys = LinearSystem(rng.standard_normal((3, 3)), rng.standard_normal((3, 1)), C)
    for q in range(3):
        if is_resilient_with_actuators(sys, 3, q)[0]:
            assert is_sensor_correctable(sys, 3, q)[0]
