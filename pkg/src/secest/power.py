"""Linearized swing-equation model of a generator/bus network.

Load buses carry no dynamics and are eliminated by Kron reduction, leaving two
states per generator: rotor angle delta_i and frequency omega_i.  Continuous
dynamics ``M delta'' = -D delta' - L_red delta + P_mech`` are discretized by
forward Euler at the network's sample time.

Sensors (in this order): real power injection at every bus, real power flow on
every branch, and the rotor angle of the first generator.  Bus angles are
reconstructed from generator angles through the Kron reduction map, so
injections at zero-injection load buses are identically zero in this model.
"""

from dataclasses import dataclass
from importlib import resources
import json
import warnings

import jsonschema
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from secest.errors import DimensionError
from secest.model import LinearSystem

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["buses", "branches", "generators", "dt"],
    "properties": {
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["id"], "properties": {"id": {"type": "integer"}}},
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "b"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "b": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "inertia", "damping"],
                "properties": {
                    "bus": {"type": "integer"},
                    "inertia": {"type": "number", "exclusiveMinimum": 0},
                    "damping": {"type": "number", "minimum": 0},
                },
            },
        },
        "dt": {"type": "number", "exclusiveMinimum": 0},
    },
}


class NetworkError(DimensionError):
    pass


@dataclass(frozen=True)
class NetworkDescription:
    buses: tuple
    branches: tuple  # (from_bus, to_bus, susceptance)
    generators: tuple  # (bus, inertia, damping)
    dt: float = 0.01

    def __post_init__(self):
        ids = list(self.buses)
        if not ids:
            raise NetworkError("buses: at least one bus is required")
        if len(set(ids)) != len(ids):
            raise NetworkError("buses: duplicate bus ids")
        known = set(ids)
        for k, (f, t, b) in enumerate(self.branches):
            if f not in known or t not in known:
                raise NetworkError(f"branches[{k}]: unknown bus in ({f}, {t})")
            if f == t:
                raise NetworkError(f"branches[{k}]: self-loop at bus {f}")
            if not b > 0:
                raise NetworkError(f"branches[{k}].b: susceptance must be > 0")
        gbus = [g[0] for g in self.generators]
        if not gbus:
            raise NetworkError("generators: at least one generator is required")
        for k, (bus, M, D) in enumerate(self.generators):
            if bus not in known:
                raise NetworkError(f"generators[{k}].bus: unknown bus {bus}")
            if not M > 0:
                raise NetworkError(f"generators[{k}].inertia: must be > 0")
            if D < 0:
                raise NetworkError(f"generators[{k}].damping: must be >= 0")
        if len(set(gbus)) != len(gbus):
            raise NetworkError("generators: at most one generator per bus")
        if not self.dt > 0:
            raise NetworkError("dt: sample time must be > 0")

    @classmethod
    def from_dict(cls, doc):
        try:
            jsonschema.validate(doc, NETWORK_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(x) for x in exc.absolute_path) or "<root>"
            raise NetworkError(f"{path}: {exc.message}") from None
        return cls(
            buses=tuple(int(b["id"]) for b in doc["buses"]),
            branches=tuple((int(b["from"]), int(b["to"]), float(b["b"])) for b in doc["branches"]),
            generators=tuple((int(g["bus"]), float(g["inertia"]), float(g["damping"]))
                             for g in doc["generators"]),
            dt=float(doc["dt"]),
        )

    def to_dict(self):
        return {
            "buses": [{"id": b} for b in self.buses],
            "branches": [{"from": f, "to": t, "b": b} for f, t, b in self.branches],
            "generators": [{"bus": g, "inertia": M, "damping": D} for g, M, D in self.generators],
            "dt": self.dt,
        }


@dataclass(frozen=True)
class SwingModel:
    system: LinearSystem
    sensor_labels: tuple
    actuator_labels: tuple
    reduced_laplacian: np.ndarray
    reduction_map: np.ndarray  # bus angles = reduction_map @ generator angles

    def labels(self):
        return {"sensors": list(self.sensor_labels), "actuators": list(self.actuator_labels),
                "states": [f"delta[{i + 1}]" for i in range(self.system.n // 2)]
                + [f"omega[{i + 1}]" for i in range(self.system.n // 2)]}


def load_network(path=None):
    """Read and validate a network file; ``None`` loads the bundled IEEE 14-bus case."""
    if path is None:
        text = resources.files("secest").joinpath("data", "ieee14.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"<root>: invalid JSON ({exc})") from None
    return NetworkDescription.from_dict(doc)


def laplacian(net):
    """Susceptance-weighted bus Laplacian; parallel branches add."""
    idx = {b: k for k, b in enumerate(net.buses)}
    N = len(net.buses)
    L = np.zeros((N, N))
    for f, t, b in net.branches:
        i, j = idx[f], idx[t]
        L[i, i] += b
        L[j, j] += b
        L[i, j] -= b
        L[j, i] -= b
    return L


def _is_connected(net):
    N = len(net.buses)
    if N == 1:
        return True
    idx = {b: k for k, b in enumerate(net.buses)}
    rows = [idx[f] for f, _, _ in net.branches]
    cols = [idx[t] for _, t, _ in net.branches]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
    ncomp, _ = connected_components(graph, directed=False)
    return ncomp == 1


def _clean(M):
    M = M.copy()
    M[np.abs(M) <= 1e-12 * max(1.0, float(np.max(np.abs(M))))] = 0.0
    return M


def build_swing_system(net):
    if not _is_connected(net):
        raise NetworkError("network is disconnected")
    idx = {b: k for k, b in enumerate(net.buses)}
    N = len(net.buses)
    gen = [idx[g[0]] for g in net.generators]
    g = len(gen)
    load = [k for k in range(N) if k not in set(gen)]
    L = laplacian(net)

    Theta = np.zeros((N, g))
    Theta[gen, np.arange(g)] = 1.0
    if load:
        R = -np.linalg.solve(L[np.ix_(load, load)], L[np.ix_(load, gen)])
        Theta[load] = R
    L_red = L[np.ix_(gen, gen)] + (L[np.ix_(gen, load)] @ Theta[load] if load else 0.0)
    L_red = 0.5 * (L_red + L_red.T)

    M = np.array([x[1] for x in net.generators])
    D = np.array([x[2] for x in net.generators])
    dt = net.dt
    I = np.eye(g)
    A = np.block([
        [I, dt * I],
        [-dt * (L_red / M[:, None]), I - dt * np.diag(D / M)],
    ])
    B = np.vstack([np.zeros((g, g)), dt * np.diag(1.0 / M)])

    inj = L @ Theta
    flows = np.array([b * (Theta[idx[f]] - Theta[idx[t]]) for f, t, b in net.branches]).reshape(-1, g)
    angle = np.zeros((1, g))
    angle[0, 0] = 1.0
    C_delta = _clean(np.vstack([inj, flows, angle]))
    C = np.hstack([C_delta, np.zeros_like(C_delta)])

    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho > 1.05:
        warnings.warn(f"discretized swing model has spectral radius {rho:.4f} > 1.05; "
                      "consider a smaller dt", RuntimeWarning, stacklevel=2)
    labels = ([f"P_inj[bus {b}]" for b in net.buses]
              + [f"P_flow[{f}-{t}]" for f, t, _ in net.branches]
              + [f"delta[gen {net.generators[0][0]}]"])
    act = tuple(f"P_mech[gen {bus}]" for bus, _, _ in net.generators)
    return SwingModel(LinearSystem(A, B, C), tuple(labels), act, L_red, Theta)
