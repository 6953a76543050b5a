"""Plant representation, attacked trajectories and the linear maps built on (A, B, C)."""

from dataclasses import dataclass, field

import numpy as np

from secest._linalg import row_support
from secest.errors import DimensionError


def _matrix(name, value, shape=None):
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and shape is not None and len(shape) == 2:
        arr = arr.reshape(shape)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time plant x(t+1) = A x(t) + B u(t), y(t) = C x(t).

    ``B`` may have zero columns (no actuators).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _matrix("A", self.A)
        n = A.shape[0]
        if A.shape != (n, n) or n == 0:
            raise DimensionError(f"A must be square and nonempty, got {A.shape}")
        B = np.array(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((n, 0))
        B = _matrix("B", B, (n, None))
        C = _matrix("C", self.C, (None, n))
        if C.shape[0] == 0:
            raise DimensionError("C must have at least one row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @classmethod
    def autonomous(cls, A, C):
        A = np.asarray(A, dtype=float)
        return cls(A, np.zeros((A.shape[0], 0)), C)

    def with_A(self, A):
        return LinearSystem(A, self.B, self.C)

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}


@dataclass(frozen=True)
class AttackScenario:
    """Attacked sensor set K, actuator set L (0-based) and the injected signals.

    ``E`` is p x T (column t is e(t)); ``W`` is m x (T-1).
    """

    K: frozenset
    L: frozenset
    E: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        E = np.array(self.E, dtype=float)
        W = np.array(self.W, dtype=float)
        if E.ndim != 2 or W.ndim != 2:
            raise DimensionError("E and W must be 2-D")
        T = E.shape[1]
        if T < 1:
            raise DimensionError("attack horizon T must be >= 1")
        if W.shape[1] != T - 1:
            raise DimensionError(f"W must have T-1 = {T - 1} columns, got {W.shape[1]}")
        K = frozenset(int(i) for i in self.K)
        L = frozenset(int(j) for j in self.L)
        if any(i < 0 or i >= E.shape[0] for i in K):
            raise DimensionError(f"sensor indices {sorted(K)} out of range for p={E.shape[0]}")
        if any(j < 0 or j >= W.shape[0] for j in L):
            raise DimensionError(f"actuator indices {sorted(L)} out of range for m={W.shape[0]}")
        # supports are exact here: these are the injected signals, not estimates
        if not set(np.flatnonzero(np.any(E != 0, axis=1))) <= K:
            raise DimensionError("rowsupp(E) is not contained in K")
        if not set(np.flatnonzero(np.any(W != 0, axis=1))) <= L:
            raise DimensionError("rowsupp(W) is not contained in L")
        E.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "W", W)

    @property
    def T(self):
        return self.E.shape[1]

    @classmethod
    def none(cls, p, m, T):
        return cls(frozenset(), frozenset(), np.zeros((p, T)), np.zeros((m, T - 1)))

    @classmethod
    def sensors(cls, E, m=0):
        """Sensor-only attack; K is inferred from the nonzero rows of E."""
        E = np.asarray(E, dtype=float)
        K = frozenset(np.flatnonzero(np.any(E != 0, axis=1)).tolist())
        return cls(K, frozenset(), E, np.zeros((m, E.shape[1] - 1)))


@dataclass(frozen=True)
class MeasurementBlock:
    """The p x T matrix of stacked outputs y(0), ..., y(T-1)."""

    Y: np.ndarray

    def __post_init__(self):
        Y = _matrix("Y", self.Y)
        object.__setattr__(self, "Y", Y)

    @property
    def T(self):
        return self.Y.shape[1]

    @property
    def p(self):
        return self.Y.shape[0]

    def prefix(self, T):
        return MeasurementBlock(self.Y[:, :T])


@dataclass(frozen=True)
class Trajectory:
    X: np.ndarray
    U: np.ndarray = field(default=None)


def as_measurements(Y):
    return Y.Y if isinstance(Y, MeasurementBlock) else np.asarray(Y, dtype=float)


def _inputs(system, inputs, T):
    if inputs is None:
        return np.zeros((system.m, T - 1))
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U.reshape(system.m, -1)
    if U.shape != (system.m, T - 1):
        raise DimensionError(f"inputs must be {system.m} x {T - 1}, got {U.shape}")
    return U


def simulate(system, x0, inputs=None, attack=None, T=None):
    """Run the attacked plant forward for T steps.

    Actuator attacks are added to the nominal inputs, sensor attacks to the outputs.
    Returns ``(Trajectory, MeasurementBlock)``.
    """
    if attack is not None:
        T = attack.T
    elif inputs is not None and np.ndim(inputs) == 2:
        T = np.shape(inputs)[1] + 1
    if T is None:
        raise DimensionError("horizon T is undetermined; pass T, inputs or attack")
    U = _inputs(system, inputs, T)
    if attack is None:
        attack = AttackScenario.none(system.p, system.m, T)
    if attack.E.shape[0] != system.p or attack.W.shape[0] != system.m:
        raise DimensionError(
            f"attack dimensions (p={attack.E.shape[0]}, m={attack.W.shape[0]}) "
            f"do not match system (p={system.p}, m={system.m})"
        )
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (system.n,):
        raise DimensionError(f"x0 must have length {system.n}, got {x.shape}")
    X = np.empty((system.n, T))
    X[:, 0] = x
    for t in range(T - 1):
        X[:, t + 1] = system.A @ X[:, t] + system.B @ (U[:, t] + attack.W[:, t])
    Y = system.C @ X + attack.E
    return Trajectory(X, U), MeasurementBlock(Y)


def _check_horizon(T):
    if int(T) != T or T < 1:
        raise DimensionError(f"horizon must be a positive integer, got {T}")
    return int(T)


def markov_blocks(system, T):
    """List [C, CA, ..., CA^{T-1}] built incrementally."""
    T = _check_horizon(T)
    blocks = [system.C]
    for _ in range(T - 1):
        blocks.append(blocks[-1] @ system.A)
    return blocks


def observability_matrix(system, T):
    """Stacked [C; CA; ...; CA^{T-1}] (pT x n, time-major rows)."""
    return np.vstack(markov_blocks(system, T))


def sensor_major(O, p):
    """Reorder time-major stacked rows (t*p + i) into sensor-major (i*T + t)."""
    T = O.shape[0] // p
    return O.reshape(T, p, -1).transpose(1, 0, 2).reshape(p * T, -1)


def phi_map(system, T, z):
    """p x T matrix whose column t is C A^t z."""
    T = _check_horizon(T)
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (system.n,):
        raise DimensionError(f"z must have length {system.n}")
    out = np.empty((system.p, T))
    v = z.copy()
    for t in range(T):
        out[:, t] = system.C @ v
        v = system.A @ v
    return out


def input_effect(system, inputs):
    """Contribution of known inputs to the outputs (p x T, first column zero)."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U.reshape(system.m, -1)
    if U.shape[0] != system.m:
        raise DimensionError(f"inputs must have {system.m} rows, got {U.shape[0]}")
    T = U.shape[1] + 1
    out = np.zeros((system.p, T))
    xi = np.zeros(system.n)
    for t in range(T - 1):
        xi = system.A @ xi + system.B @ U[:, t]
        out[:, t + 1] = system.C @ xi
    return out


def compensate(Y, system, inputs=None):
    """Remove the known-input response so the data obey the autonomous model."""
    Yarr = as_measurements(Y)
    if Yarr.shape[0] != system.p:
        raise DimensionError(f"Y has {Yarr.shape[0]} rows, system has p={system.p}")
    if inputs is None or system.m == 0:
        return MeasurementBlock(Yarr)
    U = _inputs(system, inputs, Yarr.shape[1])
    return MeasurementBlock(Yarr - input_effect(system, U))


def attack_rows(E):
    """Numerical row support of an attack/residual block."""
    return frozenset(row_support(E).tolist())
