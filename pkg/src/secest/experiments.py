"""Seeded Monte-Carlo harness for decoder success rates and closed-loop runs.

Every trial draws its randomness from ``SeedSequence([seed, *cell, trial])`` so
cells are reproducible in isolation and may run in any order.  Results are
aggregated by counting, and the CSV output is byte-identical for a fixed
configuration unless wall-clock timing is requested.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import csv
import io
import math
import os
import time

import numpy as np

from secest.decoders import (
    decode_l0,
    decode_l0_actuators,
    decode_l1,
    decode_l1_actuators,
)
from secest.errors import DimensionError
from secest.model import AttackScenario, LinearSystem, simulate
from secest.power import build_swing_system, load_network
from secest.solver import norm_label, parse_norm

SUCCESS_RTOL = 1e-6
CSV_FIELDS = ("trials", "successes", "success_rate", "mean_steps", "mean_solve_ms")


def random_system(n, m, p, seed=None):
    """Gaussian (A, B, C) with A rescaled to spectral radius 1."""
    if min(n, p) < 1 or m < 0:
        raise DimensionError("need n >= 1, p >= 1 and m >= 0")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    A = A / np.max(np.abs(np.linalg.eigvals(A)))
    return LinearSystem(A, B, C)


def random_attack(dim, q, T, magnitude_scale=20.0, seed=None, reference=1.0, candidates=None):
    """Attack of support size q drawn uniformly, with Gaussian values.

    Values are scaled so the expected absolute entry equals
    ``magnitude_scale * reference``.  Returns ``(support, values)`` with values
    of shape (dim, T) and zero rows off the support.
    """
    rng = np.random.default_rng(seed)
    pool = np.arange(dim) if candidates is None else np.asarray(sorted(candidates), dtype=int)
    if q < 0 or q > pool.size:
        raise ValueError(f"cannot attack {q} of {pool.size} available channels")
    K = tuple(sorted(rng.choice(pool, size=q, replace=False).tolist())) if q else ()
    V = np.zeros((dim, T))
    if q:
        # E|N(0,1)| = sqrt(2/pi)
        V[list(K)] = (magnitude_scale * reference * math.sqrt(math.pi / 2)
                      * rng.standard_normal((q, T)))
    return K, V


@dataclass
class ExperimentConfig:
    """One Monte-Carlo grid.

    ``system`` is one of ``{"kind": "random", "n", "m", "p", "seed"}``,
    ``{"kind": "swing", "network": path-or-None}``, ``{"kind": "inline", "A", "B", "C"}``
    or ``{"kind": "file", "path"}``.  ``grid`` is "sensor" (cells indexed by q)
    or "actuator" (cells indexed by (|K|, |L|)).  ``protected`` lists 1-based
    sensors that are never attacked; the decoder is not told about them.
    """

    system: dict
    grid: str = "sensor"
    T: int = 15
    qs: list = field(default_factory=lambda: list(range(0, 13)))
    ks: list = field(default_factory=list)
    ls: list = field(default_factory=list)
    trials: int = 200
    seed: int = 0
    mode: str = "l1"
    r: object = 2
    lam: float = 10.0
    delay: int = 0
    magnitude_scale: float = 20.0
    protected: list = field(default_factory=list)
    prefix_scan: bool = True
    timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.grid not in ("sensor", "actuator"):
            raise ValueError(f"grid must be 'sensor' or 'actuator', got {self.grid!r}")
        if self.mode not in ("l0", "l1"):
            raise ValueError(f"mode must be 'l0' or 'l1', got {self.mode!r}")
        if self.delay < 0 or self.delay >= self.T:
            raise ValueError("delay must satisfy 0 <= d < T")
        self.r = norm_label(parse_norm(self.r))
        if "kind" not in self.system:
            raise ValueError("system needs a 'kind'")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


@dataclass
class CellResult:
    key: tuple
    trials: int
    successes: int
    steps: list = field(default_factory=list)
    solve_ms: list = None

    @property
    def success_rate(self):
        return self.successes / self.trials

    @property
    def mean_steps(self):
        return float(np.mean(self.steps)) if self.steps else None

    @property
    def mean_solve_ms(self):
        return float(np.mean(self.solve_ms)) if self.solve_ms else None

    def row(self):
        out = dict(self.key)
        out.update(trials=self.trials, successes=self.successes,
                   success_rate=self.success_rate, mean_steps=self.mean_steps,
                   mean_solve_ms=self.mean_solve_ms)
        return out


def build_system(spec):
    """Materialize the system described by an experiment's ``system`` entry."""
    kind = spec["kind"]
    if kind == "random":
        return random_system(spec["n"], spec.get("m", 0), spec["p"], spec.get("seed", 0))
    if kind == "swing":
        return build_swing_system(load_network(spec.get("network"))).system
    if kind == "inline":
        return LinearSystem(spec["A"], spec.get("B", np.zeros((len(spec["A"]), 0))), spec["C"])
    if kind == "file":
        from secest.io import read_system
        return read_system(spec["path"])
    raise ValueError(f"unknown system kind {kind!r}")


def _trial_rng(seed, cell, trial):
    return np.random.default_rng(np.random.SeedSequence([seed, *cell, trial]))


def _close(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if not np.all(np.isfinite(a)):
        return False
    return float(np.max(np.abs(a - b))) <= SUCCESS_RTOL * max(1.0, float(np.max(np.abs(b))))


def _decode_sensor(system, Y, cfg):
    if cfg.mode == "l0":
        return decode_l0(system, Y, force=True)
    return decode_l1(system, Y, r=cfg.r)


def _sensor_trial(system, cfg, q, trial):
    rng = _trial_rng(cfg.seed, (q,), trial)
    x0 = rng.standard_normal(system.n)
    traj, clean = simulate(system, x0, T=cfg.T)
    reference = float(np.mean(np.abs(traj.X)))
    pool = [i for i in range(system.p) if i + 1 not in set(cfg.protected)]
    K, E = random_attack(system.p, q, cfg.T, cfg.magnitude_scale, rng, reference, pool)
    Y = clean.Y + E
    prefixes = range(1, cfg.T + 1) if cfg.prefix_scan else (cfg.T,)
    elapsed = 0.0
    for Tp in prefixes:
        t0 = time.perf_counter()
        res = _decode_sensor(system, Y[:, :Tp], cfg)
        elapsed += time.perf_counter() - t0
        if res.ok and _close(res.x0_hat, x0):
            return True, Tp, elapsed
    return False, None, elapsed


def _decode_actuator(system, Y, cfg):
    if cfg.mode == "l0":
        return decode_l0_actuators(system, Y, delay=cfg.delay, force=True)
    return decode_l1_actuators(system, Y, r=cfg.r, lam=cfg.lam, delay=cfg.delay)


def _actuator_trial(system, cfg, cell, trial):
    nk, nl = cell
    rng = _trial_rng(cfg.seed, cell, trial)
    x0 = rng.standard_normal(system.n)
    traj, _ = simulate(system, x0, T=cfg.T)
    reference = float(np.mean(np.abs(traj.X)))
    pool = [i for i in range(system.p) if i + 1 not in set(cfg.protected)]
    K, E = random_attack(system.p, nk, cfg.T, cfg.magnitude_scale, rng, reference, pool)
    L, W = random_attack(system.m, nl, cfg.T - 1, cfg.magnitude_scale, rng, reference)
    attack = AttackScenario(frozenset(K), frozenset(L), E, W)
    traj, meas = simulate(system, x0, attack=attack)
    t0 = time.perf_counter()
    res = _decode_actuator(system, meas.Y, cfg)
    elapsed = time.perf_counter() - t0
    keep = cfg.T - cfg.delay
    ok = res.ok and _close(res.state_sequence[:, :keep], traj.X[:, :keep])
    return ok, cfg.T if ok else None, elapsed


def _run_cell(args):
    system, cfg, cell = args
    trial_fn = _sensor_trial if cfg.grid == "sensor" else _actuator_trial
    key_cell = cell[0] if cfg.grid == "sensor" else cell
    successes, steps, times = 0, [], []
    for trial in range(cfg.trials):
        ok, Tp, elapsed = trial_fn(system, cfg, key_cell, trial)
        successes += ok
        if ok:
            steps.append(Tp)
        times.append(1e3 * elapsed)
    if cfg.grid == "sensor":
        key = (("q", cell[0]),)
    else:
        key = (("K", cell[0]), ("L", cell[1]))
    return CellResult(key, cfg.trials, successes, steps, times if cfg.timing else None)


def worker_count():
    """Worker processes allowed by SECEST_THREADS (default 1)."""
    raw = os.environ.get("SECEST_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"SECEST_THREADS must be an integer, got {raw!r}") from None
    return max(1, k)


def _map(fn, jobs):
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _cells(cfg, system):
    if cfg.grid == "sensor":
        attackable = system.p - len(cfg.protected)
        return [(q,) for q in cfg.qs if 0 <= q <= attackable]
    ks = cfg.ks or list(range(system.p + 1))
    ls = cfg.ls or list(range(system.m + 1))
    return [(k, l) for k in ks for l in ls if k <= system.p - len(cfg.protected) and l <= system.m]


def run_grid(cfg, system=None):
    """Run every cell of ``cfg`` and return the CellResults in grid order."""
    if system is None:
        system = build_system(cfg.system)
    return _map(_run_cell, [(system, cfg, c) for c in _cells(cfg, system)])


def run_sensor_grid(cfg, system=None):
    if cfg.grid != "sensor":
        raise ValueError("run_sensor_grid needs grid='sensor'")
    return run_grid(cfg, system)


def run_actuator_grid(cfg, system=None):
    if cfg.grid != "actuator":
        raise ValueError("run_actuator_grid needs grid='actuator'")
    if cfg.T < 2:
        raise ValueError("actuator grids need T >= 2")
    return run_grid(cfg, system)


def swing_protected(model):
    """1-based index of the rotor-angle sensor, which attacks never touch."""
    return [i + 1 for i, lab in enumerate(model.sensor_labels) if lab.startswith("delta")]


def power_config(trials=200, seed=0, qs=None, network=None):
    """Sensor-attack experiment on the swing model: l1/linf, T = 10."""
    model = build_swing_system(load_network(network))
    return ExperimentConfig(
        system={"kind": "swing", "network": network},
        grid="sensor", T=10, qs=list(range(0, 17)) if qs is None else list(qs),
        trials=trials, seed=seed, mode="l1", r="inf",
        protected=swing_protected(model), prefix_scan=False,
    )


def run_power_grid_experiment(cfg=None):
    return run_sensor_grid(cfg or power_config())


def preset(name, trials=None, seed=0):
    """Configurations behind the figure aliases of the command line."""
    if name in ("fig2a", "fig2b"):
        cfg = ExperimentConfig(system={"kind": "random", "n": 25, "m": 0, "p": 20, "seed": seed},
                               T=15, qs=list(range(0, 13)), trials=200, seed=seed, r=2)
    elif name == "fig3b":
        cfg = power_config(seed=seed)
    elif name == "fig4l":
        cfg = ExperimentConfig(system={"kind": "random", "n": 15, "m": 10, "p": 10, "seed": seed},
                               grid="actuator", T=15, trials=200, seed=seed, r=2, lam=10.0)
    elif name == "fig4r":
        model = build_swing_system(load_network())
        cfg = ExperimentConfig(system={"kind": "swing", "network": None}, grid="actuator",
                               T=10, ks=list(range(0, 13)), trials=200, seed=seed, r="inf",
                               lam=1e-5, delay=1, protected=swing_protected(model))
    else:
        raise ValueError(f"unknown preset {name!r}")
    if trials is not None:
        cfg.trials = trials
    cfg.__post_init__()
    return cfg


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def results_csv(cells):
    """CSV text: scenario keys, then trials, successes, success_rate, mean_steps, mean_solve_ms."""
    buf = io.StringIO()
    if not cells:
        return ""
    keys = [k for k, _ in cells[0].key]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys + list(CSV_FIELDS))
    for c in cells:
        row = c.row()
        w.writerow([_fmt(row[k]) for k in keys + list(CSV_FIELDS)])
    return buf.getvalue()


def write_csv(cells, path):
    with open(path, "w", newline="") as fh:
        fh.write(results_csv(cells))


# closed loop


@dataclass
class ClosedLoopLog:
    X: np.ndarray
    X_hat: np.ndarray
    U: np.ndarray
    decode_errors: np.ndarray
    kappa: float
    alpha: float
    verdict: str
    failed_step: int = None
    reason: str = ""

    @property
    def stabilized(self):
        return self.verdict == "stabilized"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "kappa": self.kappa,
            "alpha": self.alpha,
            "failed_step": self.failed_step,
            "reason": self.reason,
            "max_decode_error": float(np.nanmax(self.decode_errors))
            if np.any(np.isfinite(self.decode_errors)) else None,
            "state_norms": np.linalg.norm(self.X, axis=0).tolist(),
        }


def _decode_window(system, Yw, Uw, mode, r):
    if mode == "l0":
        return decode_l0(system, Yw, inputs=Uw, force=True)
    return decode_l1(system, Yw, r=r, inputs=Uw)


def fit_decay(norms, x0_norm):
    """Fit alpha by least squares on log-norms over the tail half; kappa makes the bound hold."""
    norms = np.asarray(norms, dtype=float)
    steps = norms.size
    t = np.arange(steps)
    tail = t >= steps // 2
    floor = 1e-300
    logs = np.log(np.maximum(norms, floor))
    slope = np.polyfit(t[tail], logs[tail], 1)[0] if tail.sum() >= 2 else 0.0
    alpha = float(np.exp(slope))
    base = max(x0_norm, floor)
    with np.errstate(over="ignore", divide="ignore"):
        ratios = norms / (base * alpha ** t)
    kappa = float(np.max(ratios[np.isfinite(ratios)])) if np.any(np.isfinite(ratios)) else math.inf
    return kappa, alpha


def run_closed_loop(system, gain, x0, E, T, mode="l1", r=2):
    """Decode-then-feed-back loop under sensor attacks.

    Until T measurements are available the input is zero; afterwards, at each
    step t >= T-1 the state x(t) is estimated by decoding the last T
    input-compensated measurements and u(t) = gain @ x_hat(t) is applied.
    ``E`` (p x steps) holds the sensor attacks.
    """
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    E = np.asarray(E, dtype=float)
    n, m, p = system.n, system.m, system.p
    if E.shape[0] != p:
        raise DimensionError(f"attack must have {p} rows")
    if gain.shape != (m, n):
        raise DimensionError(f"gain must be {m} x {n}")
    steps = E.shape[1]
    X = np.zeros((n, steps))
    Xh = np.full((n, steps), np.nan)
    U = np.zeros((m, max(steps - 1, 0)))
    Y = np.zeros((p, steps))
    errs = np.full(steps, np.nan)
    X[:, 0] = x0
    failed, reason = None, ""
    for t in range(steps):
        Y[:, t] = system.C @ X[:, t] + E[:, t]
        u = np.zeros(m)
        if t >= T - 1:
            s = t - T + 1
            res = _decode_window(system, Y[:, s:t + 1], U[:, s:t], mode, r)
            if not res.ok:
                failed, reason = t, f"decoder {res.status}: {res.reason}"
                break
            Xh[:, t] = res.state_sequence[:, -1]
            errs[t] = float(np.max(np.abs(Xh[:, t] - X[:, t])))
            u = gain @ Xh[:, t]
        if t + 1 < steps:
            U[:, t] = u
            X[:, t + 1] = system.A @ X[:, t] + system.B @ u
    if failed is not None:
        return ClosedLoopLog(X, Xh, U, errs, math.nan, math.nan, "failed", failed, reason)
    kappa, alpha = fit_decay(np.linalg.norm(X, axis=0), float(np.linalg.norm(x0)))
    verdict = "stabilized" if alpha < 1 else "not-stabilized"
    return ClosedLoopLog(X, Xh, U, errs, kappa, alpha, verdict)


def feedback_invariance(system, gains, x0, E, mode="l1", r=2):
    """Decode x(0) from T closed-loop measurements under each gain.

    The loop runs u(t) = K x(t) for every gain K so the input histories differ;
    after compensation the decodes of x(0) must coincide.  Returns the stacked
    decodes (one row per gain) and their largest pairwise deviation.
    """
    E = np.asarray(E, dtype=float)
    T = E.shape[1]
    decodes = []
    for K in gains:
        K = np.atleast_2d(np.asarray(K, dtype=float))
        X = np.zeros((system.n, T))
        U = np.zeros((system.m, T - 1))
        X[:, 0] = x0
        for t in range(T - 1):
            U[:, t] = K @ X[:, t]
            X[:, t + 1] = system.A @ X[:, t] + system.B @ U[:, t]
        Y = system.C @ X + E
        res = _decode_window(system, Y, U, mode, r)
        decodes.append(res.x0_hat)
    D = np.vstack(decodes)
    dev = float(np.max(np.abs(D - D[0]))) if len(decodes) > 1 else 0.0
    return D, dev
