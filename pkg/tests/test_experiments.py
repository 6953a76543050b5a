import math

import numpy as np
import pytest
from scipy import stats

from secest.experiments import (
    ExperimentConfig,
    feedback_invariance,
    fit_decay,
    random_attack,
    random_system,
    results_csv,
    run_actuator_grid,
    run_closed_loop,
    run_sensor_grid,
    worker_count,
)
from secest.feedback import design_resilient_feedback, random_admissible_poles
from secest.model import LinearSystem, simulate
from secest.resilience import max_correctable_sensor_errors


def small_sensor_config(**kw):
    base = dict(system={"kind": "random", "n": 4, "m": 0, "p": 8, "seed": 3}, T=6,
                qs=[0, 1, 2, 3], trials=12, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_random_system_normalization():
    for seed in range(5):
        sys = random_system(6, 2, 4, seed)
        assert abs(np.max(np.abs(np.linalg.eigvals(sys.A))) - 1) <= 1e-12
    a, b = random_system(5, 1, 3, 9), random_system(5, 1, 3, 9)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B) and np.array_equal(a.C, b.C)
    assert abs(random_system(1, 0, 1, 4).A[0, 0]) == 1.0


def test_random_attack_zero_and_shape():
    K, V = random_attack(6, 0, 4, seed=0)
    assert K == () and V.shape == (6, 4) and np.all(V == 0)
    K, V = random_attack(6, 3, 4, seed=1)
    assert len(K) == 3 and set(np.flatnonzero(np.any(V != 0, axis=1))) == set(K)
    with pytest.raises(ValueError):
        random_attack(3, 4, 2)


def test_random_attack_support_uniform():
    rng = np.random.default_rng(0)
    p, q, draws = 5, 2, 100_000
    counts = {}
    for _ in range(draws):
        K, _ = random_attack(p, q, 1, seed=rng)
        counts[K] = counts.get(K, 0) + 1
    assert len(counts) == math.comb(p, q)
    obs = np.array(list(counts.values()))
    prob = 1 / math.comb(p, q)
    sigma = math.sqrt(draws * prob * (1 - prob))
    assert np.all(np.abs(obs - draws * prob) <= 3 * sigma)
    assert stats.chisquare(obs).pvalue > 1e-3


def test_attack_magnitude_ratio():
    sys = random_system(25, 0, 20, 0)
    rng = np.random.default_rng(1)
    ratios = []
    for _ in range(50):
        x0 = rng.standard_normal(25)
        traj, _ = simulate(sys, x0, T=15)
        ref = float(np.mean(np.abs(traj.X)))
        K, E = random_attack(20, 5, 15, 20.0, rng, ref)
        ratios.append(np.mean(np.abs(E[list(K)])) / ref)
    assert 15 <= np.mean(ratios) <= 25


def test_config_validation():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"system": {"kind": "random"}, "colour": 1})
    with pytest.raises(ValueError):
        small_sensor_config(trials=0)
    with pytest.raises(ValueError):
        small_sensor_config(r=3)
    cfg = small_sensor_config()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_sensor_grid_rates_and_steps():
    cells = run_sensor_grid(small_sensor_config())
    assert [c.key for c in cells] == [(("q", q),) for q in range(4)]
    assert cells[0].success_rate == 1.0
    for c in cells:
        assert 0 <= c.success_rate <= 1
    steps = [c.mean_steps for c in cells if c.mean_steps is not None]
    assert all(b >= a - 0.5 for a, b in zip(steps, steps[1:]))


def test_success_rate_monotone_within_binomial_slack():
    cells = run_sensor_grid(small_sensor_config(trials=30, prefix_scan=False))
    for a, b in zip(cells, cells[1:]):
        sigma = math.sqrt(max(a.success_rate * (1 - a.success_rate), 1 / a.trials) / a.trials)
        assert b.success_rate <= a.success_rate + 3 * sigma


def test_csv_is_byte_deterministic(monkeypatch):
    cfg = small_sensor_config(trials=6)
    first = results_csv(run_sensor_grid(cfg))
    assert first == results_csv(run_sensor_grid(cfg))
    assert first.splitlines()[0] == "q,trials,successes,success_rate,mean_steps,mean_solve_ms"
    monkeypatch.setenv("SECEST_THREADS", "2")
    assert worker_count() == 2
    assert first == results_csv(run_sensor_grid(cfg))


def test_worker_count_rejects_garbage(monkeypatch):
    monkeypatch.setenv("SECEST_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_actuator_grid_origin_cell():
    cfg = ExperimentConfig(system={"kind": "random", "n": 4, "m": 2, "p": 6, "seed": 2},
                           grid="actuator", T=6, ks=[0, 1], ls=[0, 1], trials=5, lam=10.0)
    cells = run_actuator_grid(cfg)
    assert cells[0].key == (("K", 0), ("L", 0)) and cells[0].success_rate == 1.0
    assert results_csv(cells).startswith("K,L,trials,")


def test_fit_decay_on_geometric_sequence():
    norms = 3.0 * 0.8 ** np.arange(30)
    kappa, alpha = fit_decay(norms, 1.0)
    assert abs(alpha - 0.8) < 1e-12 and abs(kappa - 3.0) < 1e-9


def designed_plant(seed, n=3, p=5):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A /= np.max(np.abs(np.linalg.eigvals(A))) / 1.05
    B = rng.standard_normal((n, 1))
    C = rng.standard_normal((p, n))
    design = design_resilient_feedback(A, B, C, random_admissible_poles(A, B, C, rng))
    return LinearSystem(A, B, C), design.K, rng


def test_closed_loop_without_attack_decays():
    sys, K, rng = designed_plant(0)
    log = run_closed_loop(sys, K, rng.standard_normal(3), np.zeros((5, 40)), T=3)
    assert log.stabilized and log.alpha < 1
    assert np.nanmax(log.decode_errors) <= 1e-9


def test_closed_loop_under_max_attack():
    sys, K, rng = designed_plant(1)
    q = max_correctable_sensor_errors(sys, 3).q_max
    assert q == 2
    E = np.zeros((5, 40))
    E[[0, 3]] = 1e6 * rng.standard_normal((2, 40))
    x0 = rng.standard_normal(3)
    # l0 is exact up to q_max; the l1 nullspace condition fails for this plant at q = 2
    log = run_closed_loop(sys, K, x0, E, T=3, mode="l0")
    assert log.stabilized
    assert np.nanmax(log.decode_errors) <= 1e-6 * max(1.0, np.max(np.abs(x0)))


def test_closed_loop_over_budget_is_flagged_not_asserted():
    sys, K, rng = designed_plant(2)
    rep = max_correctable_sensor_errors(sys, 3)
    # build a colliding attack on the certificate support plus one more sensor
    E = np.zeros((5, 20))
    E[list(rep.witness_set)[:3]] = 1e3 * rng.standard_normal((min(3, len(rep.witness_set)), 20))
    log = run_closed_loop(sys, K, rng.standard_normal(3), E, T=3, mode="l0")
    assert log.verdict in ("stabilized", "not-stabilized", "failed")


def test_feedback_invariance_two_gains():
    sys, K1, rng = designed_plant(3)
    K2 = 0.5 * K1
    E = np.zeros((5, 3))
    E[1] = 1e3 * rng.standard_normal(3)
    x0 = rng.standard_normal(3)
    D, dev = feedback_invariance(sys, [K1, K2, np.zeros_like(K1)], x0, E, mode="l0")
    assert dev <= 1e-9
    np.testing.assert_allclose(D[0], x0, atol=1e-9)
