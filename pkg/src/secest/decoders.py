"""State decoders under sparse attacks.

``decode_l0`` / ``decode_l0_actuators`` search attack supports exhaustively in
increasing cardinality. ``decode_l1`` / ``decode_l1_actuators`` solve the
convex group-sparse relaxation with :mod:`secest.solver` and then polish the
estimate by least squares on the rows judged clean.
"""

from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from secest._linalg import check_cost, null_space, numerical_rank, row_support, support_threshold
from secest.errors import DimensionError
from secest.model import as_measurements, compensate, markov_blocks, sensor_major
from secest.resilience import attack_patterns, stacked_input_map
from secest.solver import INF, RowNormProblem, SolverConfig, group_norms, parse_norm, solve

EXACT, CONVERGED, AMBIGUOUS, FAILED = "exact", "converged", "ambiguous", "failed"
FIT_RTOL = 1e-7


@dataclass
class DecodeResult:
    x0_hat: np.ndarray
    status: str
    sensor_support: tuple = ()
    actuator_support: tuple = ()
    residual_rows: np.ndarray = None
    state_sequence: np.ndarray = None
    w_hat: np.ndarray = None
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status in (EXACT, CONVERGED)

    def to_dict(self):
        out = {
            "status": self.status,
            "x0_hat": None if self.x0_hat is None else self.x0_hat.tolist(),
            "sensor_support": [i + 1 for i in self.sensor_support],
            "actuator_support": [j + 1 for j in self.actuator_support],
            "residual_rows": None if self.residual_rows is None else self.residual_rows.tolist(),
        }
        if self.state_sequence is not None:
            out["state_sequence"] = self.state_sequence.tolist()
        if self.reason:
            out["reason"] = self.reason
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out


def _fit_tol(b):
    return FIT_RTOL * max(1.0, float(np.linalg.norm(b)))


def _propagate(system, x0, T, inputs=None, w=None):
    X = np.empty((system.n, T))
    X[:, 0] = x0
    for t in range(T - 1):
        v = np.zeros(system.m)
        if inputs is not None:
            v = v + inputs[:, t]
        if w is not None:
            v = v + w[:, t]
        X[:, t + 1] = system.A @ X[:, t] + system.B @ v
    return X


def _prepare(system, Y, inputs):
    Yarr = as_measurements(Y)
    if Yarr.ndim != 2 or Yarr.shape[0] != system.p:
        raise DimensionError(f"measurements must be {system.p} x T, got {Yarr.shape}")
    T = Yarr.shape[1]
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(system.m, T - 1)
    Yc = compensate(Yarr, system, inputs).Y
    return Yc, T, inputs


def _residual_rows(R, r=2):
    return group_norms(R, r)


def _sensor_result(system, Yc, T, x0, status, inputs, r=2, reason="", diagnostics=None):
    O3 = np.stack(markov_blocks(system, T))
    R = Yc - np.einsum("tpn,n->pt", O3, x0)
    K = tuple(row_support(R).tolist())
    return DecodeResult(
        x0_hat=x0,
        status=status,
        sensor_support=K,
        residual_rows=_residual_rows(R, r),
        state_sequence=_propagate(system, x0, T, inputs),
        reason=reason,
        diagnostics=diagnostics or {},
    )


def _failed(system, reason, diagnostics=None):
    return DecodeResult(x0_hat=np.full(system.n, np.nan), status=FAILED, reason=reason,
                        diagnostics=diagnostics or {})


def _restricted_fit(O3, Yc, removed):
    keep = np.setdiff1d(np.arange(O3.shape[1]), removed)
    M = O3[:, keep, :].reshape(-1, O3.shape[2])
    b = Yc[keep, :].T.reshape(-1)
    if M.shape[0] == 0:
        return np.zeros(O3.shape[2]), 0.0, 0.0, 0
    x, _, rank, _ = np.linalg.lstsq(M, b, rcond=None)
    return x, float(np.linalg.norm(M @ x - b)), _fit_tol(b), rank


def decode_l0(system, Y, inputs=None, max_support=None, force=False):
    """Find the smallest sensor set whose removal leaves data explained exactly by one state."""
    Yc, T, inputs = _prepare(system, Y, inputs)
    p, n = system.p, system.n
    O3 = np.stack(markov_blocks(system, T))
    if numerical_rank(O3.reshape(-1, n)) < n:
        return _failed(system, "unobservable")
    kmax = math.ceil(p / 2) if max_support is None else max_support
    check_cost(sum(math.comb(p, k) for k in range(kmax + 1)), force, "least-squares fits")
    for k in range(kmax + 1):
        fits = []
        for K in itertools.combinations(range(p), k):
            x, res, tol, rank = _restricted_fit(O3, Yc, list(K))
            if res <= tol:
                fits.append((K, x, rank == n))
        if not fits:
            continue
        unique = [f for f in fits if f[2]]
        if not unique:
            return _sensor_result(system, Yc, T, fits[0][1], AMBIGUOUS, inputs,
                                  reason="minimal explanation does not pin the state")
        K, x, _ = unique[0]
        xtol = 1e-6 * max(1.0, float(np.max(np.abs(x))))
        clash = any((not u) or np.max(np.abs(xi - x)) > xtol for _, xi, u in fits)
        status = AMBIGUOUS if clash else EXACT
        reason = "several minimal supports explain the data" if clash else ""
        return _sensor_result(system, Yc, T, x, status, inputs, reason=reason,
                              diagnostics={"fitted_support": [i + 1 for i in K]})
    return _failed(system, f"no support of size <= {kmax} explains the data")


def _polish_sensors(O3, Yc, K):
    n = O3.shape[2]
    if len(K) >= O3.shape[1]:
        return None
    x, res, tol, rank = _restricted_fit(O3, Yc, list(K))
    if rank < n or res > tol:
        return None
    return x


def decode_l1(system, Y, r=2, config=None, inputs=None):
    """Convex l1/lr decoder: minimize the sum over sensors of the lr norm of the residual."""
    r = parse_norm(r)
    Yc, T, inputs = _prepare(system, Y, inputs)
    p, n = system.p, system.n
    O3 = np.stack(markov_blocks(system, T))
    O = O3.reshape(-1, n)
    if numerical_rank(O) < n:
        return _failed(system, "unobservable")
    Phi = sensor_major(O, p)
    problem = RowNormProblem.from_block(Phi, Yc, r=r)
    res = solve(problem, config)
    diag = res.as_dict()

    Z = res.z.reshape(p, T)
    candidates = [tuple(np.flatnonzero(np.any(Z != 0, axis=1)).tolist())]
    rows = res.residual_rows
    thr = 1e-6 * max(1.0, float(np.max(rows)) if rows.size else 1.0)
    candidates.append(tuple(np.flatnonzero(rows > thr).tolist()))
    for K in dict.fromkeys(candidates):
        x = _polish_sensors(O3, Yc, K)
        if x is None:
            continue
        obj = problem.objective(x)
        if obj <= res.objective * (1 + 1e-6) + 1e-12 * max(1.0, float(np.linalg.norm(Yc))):
            diag["polished"] = True
            return _sensor_result(system, Yc, T, x, EXACT, inputs, r, diagnostics=diag)
    if not res.converged:
        return _failed(system, "solver did not converge", diag)
    return _sensor_result(system, Yc, T, res.x_hat, CONVERGED, inputs, r, diagnostics=diag)


class _ActuatorModel:
    """Linear maps from (x0, w(0..T-2)) to outputs and to the state sequence."""

    def __init__(self, system, T):
        self.system = system
        self.T = T
        n, m, p = system.n, system.m, system.p
        self.O = np.vstack(markov_blocks(system, T))
        self.MB = stacked_input_map(system, T)
        self.H = np.hstack([self.O, self.MB])  # time-major rows, columns (x0, w time-major)
        # state map: X_t = A^t x0 + sum_{s<t} A^{t-1-s} B w_s
        S = np.zeros((n * T, n + m * (T - 1)))
        Ak = [np.eye(n)]
        for _ in range(T):
            Ak.append(system.A @ Ak[-1])
        for t in range(T):
            S[t * n:(t + 1) * n, :n] = Ak[t]
            for s in range(t):
                S[t * n:(t + 1) * n, n + s * m:n + (s + 1) * m] = Ak[t - 1 - s] @ system.B
        self.S = S

    def columns(self, L):
        n, m, T = self.system.n, self.system.m, self.T
        return list(range(n)) + [n + s * m + j for s in range(T - 1) for j in L]

    def rows(self, K):
        p = self.system.p
        return [t * p + i for t in range(self.T) for i in range(p) if i not in K]

    def fit(self, Yc, K, L, delay):
        n, m, T = self.system.n, self.system.m, self.T
        rows, cols = self.rows(set(K)), self.columns(L)
        b = Yc.T.reshape(-1)[rows]
        M = self.H[np.ix_(rows, cols)]
        v, _, _, _ = np.linalg.lstsq(M, b, rcond=None)
        res = float(np.linalg.norm(M @ v - b))
        N = null_space(M, len(cols))
        keep_states = n * (T - delay)
        unique = True
        if N.shape[1]:
            img = self.S[:keep_states][:, cols] @ N
            unique = bool(np.max(np.abs(img)) <= 1e-8 * (1.0 + np.linalg.norm(self.S)))
        full = np.zeros(n + m * (T - 1))
        full[cols] = v
        return full, res, _fit_tol(b), unique

    def split(self, v):
        n, m, T = self.system.n, self.system.m, self.T
        return v[:n], v[n:].reshape(T - 1, m).T if T > 1 else np.zeros((m, 0))


def _actuator_result(system, model, Yc, v, status, inputs, r=2, delay=0, reason="",
                     diagnostics=None):
    T = model.T
    x0, w = model.split(v)
    X = _propagate(system, x0, T, inputs, w)
    Xc = _propagate(system, x0, T, None, w)
    R = Yc - system.C @ Xc
    K = tuple(row_support(R).tolist())
    BW = system.B @ w
    L = tuple(j for j in range(system.m)
              if w.shape[1] and np.max(np.abs(system.B[:, j:j + 1] @ w[j:j + 1, :]))
              > support_threshold(BW))
    diagnostics = dict(diagnostics or {})
    diagnostics["delay"] = delay
    return DecodeResult(
        x0_hat=x0,
        status=status,
        sensor_support=K,
        actuator_support=L,
        residual_rows=_residual_rows(R, r),
        state_sequence=X,
        w_hat=w,
        reason=reason,
        diagnostics=diagnostics,
    )


def _check_delay(delay, T):
    if delay < 0 or delay >= T:
        raise DimensionError(f"delay must satisfy 0 <= d < T, got d={delay}, T={T}")


def decode_l0_actuators(system, Y, inputs=None, delay=0, max_total=None, force=False):
    """Smallest combined sensor+actuator attack explaining the data exactly."""
    Yc, T, inputs = _prepare(system, Y, inputs)
    _check_delay(delay, T)
    p, m = system.p, system.m
    model = _ActuatorModel(system, T)
    kmax = math.ceil(p / 2) if max_total is None else max_total
    n_tests = sum(math.comb(m, nl) * math.comb(p, k - nl)
                  for k in range(kmax + 1) for nl in range(min(m, k) + 1) if k - nl <= p)
    check_cost(n_tests, force, "pattern fits")
    for k in range(kmax + 1):
        fits = []
        for K, L in attack_patterns(p, m, k):
            v, res, tol, unique = model.fit(Yc, K, L, delay)
            if res <= tol:
                fits.append((K, L, v, unique))
        if not fits:
            continue
        good = [f for f in fits if f[3]]
        if not good:
            return _actuator_result(system, model, Yc, fits[0][2], AMBIGUOUS, inputs, delay=delay,
                                    reason="minimal explanation does not pin the states")
        K, L, v, _ = good[0]
        keep = system.n * (T - delay)
        Xv = model.S[:keep] @ v
        xtol = 1e-6 * max(1.0, float(np.max(np.abs(Xv))))
        clash = any((not u) or np.max(np.abs(model.S[:keep] @ vi - Xv)) > xtol
                    for _, _, vi, u in fits)
        status = AMBIGUOUS if clash else EXACT
        return _actuator_result(
            system, model, Yc, v, status, inputs, delay=delay,
            reason="several minimal patterns explain the data" if clash else "",
            diagnostics={"fitted_sensors": [i + 1 for i in K], "fitted_actuators": [j + 1 for j in L]},
        )
    return _failed(system, f"no attack pattern of size <= {kmax} explains the data")


def decode_l1_actuators(system, Y, inputs=None, r=2, lam=None, config=None, delay=0):
    """Convex decoder for joint sensor/actuator attacks.

    Minimizes sum_i ||E_i||_r + lam * sum_j ||W_j||_r over (x0, W) subject to the
    plant equations, with E eliminated as the output residual.
    """
    if lam is None or lam <= 0:
        raise ValueError("lam (actuator weight) must be a positive number")
    r = parse_norm(r)
    Yc, T, inputs = _prepare(system, Y, inputs)
    _check_delay(delay, T)
    if T < 2:
        raise DimensionError("actuator decoding needs T >= 2")
    p, m, n = system.p, system.m, system.n
    model = _ActuatorModel(system, T)
    nv = n + m * (T - 1)
    # sensor groups: sensor-major rows of H; actuator groups: -lam * w_j(0..T-2).
    # Folding lam into the rows rather than the group weights leaves the problem
    # unchanged but keeps the splitting well scaled when lam is far from 1.
    Hs = sensor_major(model.H, p)
    Wsel = np.zeros((m * (T - 1), nv))
    for j in range(m):
        for s in range(T - 1):
            Wsel[j * (T - 1) + s, n + s * m + j] = -float(lam)
    Phi = np.vstack([Hs, Wsel])
    y = np.concatenate([Yc.reshape(-1), np.zeros(m * (T - 1))])
    problem = RowNormProblem(Phi, y, (T,) * p + (T - 1,) * m,
                             np.ones(p + m), r)
    res = solve(problem, config)
    diag = res.as_dict()
    diag["lambda"] = float(lam)

    Zs = res.z[:p * T].reshape(p, T)
    Zw = res.z[p * T:].reshape(m, T - 1)
    K = tuple(np.flatnonzero(np.any(Zs != 0, axis=1)).tolist())
    L = tuple(np.flatnonzero(np.any(Zw != 0, axis=1)).tolist())
    candidates = [(K, L)]
    E_rows = group_norms((y - Phi @ res.x_hat)[:p * T].reshape(p, T), r)
    W_rows = group_norms(res.x_hat[n:].reshape(T - 1, m).T, r)
    scale = max(1.0, float(np.max(E_rows)) if E_rows.size else 1.0,
                float(np.max(W_rows)) if W_rows.size else 1.0)
    candidates.append((tuple(np.flatnonzero(E_rows > 1e-6 * scale).tolist()),
                       tuple(np.flatnonzero(W_rows > 1e-6 * scale).tolist())))
    for K, L in dict.fromkeys(candidates):
        if len(K) >= p:
            continue
        v, fres, tol, unique = model.fit(Yc, K, L, delay)
        if fres <= tol and unique:
            diag["polished"] = True
            return _actuator_result(system, model, Yc, v, EXACT, inputs, r, delay, diagnostics=diag)
    if not res.converged:
        return _failed(system, "solver did not converge", diag)
    return _actuator_result(system, model, Yc, res.x_hat, CONVERGED, inputs, r, delay,
                            diagnostics=diag)


def identify_attacks(result, Y, system, inputs=None):
    """Reconstruct attack supports and signals implied by a decode.

    Returns ``(K_hat, L_hat, E_hat, W_hat)`` with 0-based index tuples.
    """
    if result.status not in (EXACT, CONVERGED):
        raise ValueError(f"cannot identify attacks from a {result.status!r} decode")
    Yarr = as_measurements(Y)
    T = Yarr.shape[1]
    U = None if inputs is None else np.asarray(inputs, dtype=float).reshape(system.m, T - 1)
    if result.w_hat is not None:
        X = result.state_sequence
    else:
        X = _propagate(system, result.x0_hat, T, U)
    E = Yarr - system.C @ X
    W = np.zeros((system.m, T - 1))
    if system.m and T > 1:
        base = U if U is not None else np.zeros((system.m, T - 1))
        D = X[:, 1:] - system.A @ X[:, :-1] - system.B @ base
        W = np.linalg.lstsq(system.B, D, rcond=None)[0]
        W[np.abs(W) <= support_threshold(W)] = 0.0
    K = tuple(row_support(E).tolist())
    L = tuple(row_support(W).tolist()) if W.size else ()
    E = np.where(np.isin(np.arange(system.p), K)[:, None], E, 0.0)
    return K, L, E, W
