"""JSON readers and writers for systems, attack scenarios and measurement blocks.

Sensor and actuator indices are 1-based in files and 0-based in memory.
"""

import json

import numpy as np

from secest.errors import DimensionError
from secest.model import AttackScenario, LinearSystem

SCHEMA_VERSION = 1


def _load(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DimensionError(f"{path}: invalid JSON ({exc})") from None


def dump_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _matrix(doc, key, path):
    if key not in doc:
        raise DimensionError(f"{path}: missing field {key!r}")
    try:
        M = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError):
        raise DimensionError(f"{path}: field {key!r} is not a numeric matrix") from None
    return M


def system_from_dict(doc, where="system"):
    A = _matrix(doc, "A", where)
    C = _matrix(doc, "C", where)
    if "B" in doc:
        B = _matrix(doc, "B", where)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.size == 0:
            B = np.zeros((A.shape[0], 0))
    else:
        B = np.zeros((A.shape[0], 0))
    return LinearSystem(A, B, C)


def read_system(path):
    return system_from_dict(_load(path), str(path))


def system_to_dict(system):
    return {"schema": SCHEMA_VERSION, **system.to_dict()}


def scenario_to_dict(attack):
    return {
        "schema": SCHEMA_VERSION,
        "T": attack.T,
        "K": sorted(i + 1 for i in attack.K),
        "L": sorted(j + 1 for j in attack.L),
        "E": attack.E.tolist(),
        "W": attack.W.tolist(),
    }


def scenario_from_dict(doc, p, m, where="scenario"):
    T = int(doc.get("T", 0))
    E = np.asarray(doc.get("E", np.zeros((p, T))), dtype=float).reshape(p, -1)
    T = E.shape[1]
    W = np.asarray(doc.get("W", np.zeros((m, max(T - 1, 0)))), dtype=float).reshape(m, max(T - 1, 0))
    K = frozenset(int(i) - 1 for i in doc.get("K", []))
    L = frozenset(int(j) - 1 for j in doc.get("L", []))
    if any(i < 0 or i >= p for i in K) or any(j < 0 or j >= m for j in L):
        raise DimensionError(f"{where}: attack indices out of range")
    return AttackScenario(K, L, E, W)


def read_scenario(path, p, m):
    return scenario_from_dict(_load(path), p, m, str(path))


def read_matrix_csv(path):
    """Plain CSV matrix, one time step per column."""
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DimensionError(f"{path}: not a numeric CSV matrix ({exc})") from None
    return M


def write_matrix_csv(M, path):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def read_inputs(path):
    """Known inputs U (m x (T-1)) from CSV or from JSON ``{"U": ...}``."""
    if str(path).endswith(".csv"):
        return read_matrix_csv(path)
    doc = _load(path)
    return np.asarray(doc["U"] if isinstance(doc, dict) else doc, dtype=float)


def read_measurements(path):
    """Measurements from CSV (p x T) or JSON ``{"Y": p x T, "U": m x (T-1) optional}``."""
    if str(path).endswith(".csv"):
        return read_matrix_csv(path), None, {}
    doc = _load(path)
    Y = _matrix(doc, "Y", str(path))
    if Y.ndim != 2:
        raise DimensionError(f"{path}: Y must be a p x T matrix")
    U = None
    if doc.get("U") is not None:
        U = np.asarray(doc["U"], dtype=float)
    return Y, U, doc


def read_json(path):
    return _load(path)
