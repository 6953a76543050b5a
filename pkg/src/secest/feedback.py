"""Single-input state feedback that places poles and maximizes correctable sensor attacks.

For A + BK with eigenvalue lam (not in the spectrum of A) the closed-loop
eigenvector is forced to be (lam I - A)^{-1} B.  Choosing every pole so that C
times this resolvent direction has no zero entry, and the poles have distinct
magnitudes, makes every sensor see every closed-loop mode; the eigenvector
test then certifies ceil(p/2 - 1) correctable errors after n steps.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from secest._linalg import numerical_rank
from secest.errors import DimensionError, InadmissiblePoleError, PreconditionError, UncontrollableError
from secest.model import LinearSystem
from secest.resilience import max_correctable_sensor_errors

COND_WARN = 1e12
FRAGILE_RTOL = 1e-6


@dataclass(frozen=True)
class PoleSpec:
    poles: tuple

    def __post_init__(self):
        poles = tuple(complex(x) for x in np.ravel(self.poles))
        if not poles:
            raise DimensionError("pole list is empty")
        object.__setattr__(self, "poles", poles)

    @classmethod
    def from_pairs(cls, pairs):
        """Build from ``[[re, im], ...]`` (the poles.json layout) or plain numbers."""
        out = []
        for item in pairs:
            if isinstance(item, (list, tuple)):
                re, im = (list(item) + [0.0])[:2]
                out.append(complex(re, im))
            else:
                out.append(complex(item))
        return cls(tuple(out))

    @property
    def n(self):
        return len(self.poles)

    def conjugate_closed(self, tol=1e-10):
        lam = np.array(self.poles)
        scale = 1.0 + np.max(np.abs(lam))
        return all(np.min(np.abs(lam - np.conj(l))) <= tol * scale for l in lam)

    def distinct_magnitudes(self, rtol=1e-8):
        mags = np.sort(np.abs(np.array(self.poles)))
        return bool(mags.size < 2 or np.min(np.diff(mags)) > rtol * max(1.0, mags[-1]))


@dataclass
class FeedbackDesign:
    K: np.ndarray
    achieved_poles: np.ndarray
    eigenvector_supports: list
    resilience_verified: bool
    q_max: int = None
    pole_error: float = 0.0
    fragile_poles: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "K": self.K.tolist(),
            "achieved_poles": [[float(l.real), float(l.imag)] for l in self.achieved_poles],
            "eigenvector_supports": list(self.eigenvector_supports),
            "resilience_verified": self.resilience_verified,
            "q_max": self.q_max,
            "pole_error": self.pole_error,
            "fragile_poles": [[float(l.real), float(l.imag)] for l in self.fragile_poles],
            "warnings": list(self.warnings),
        }


def _column(B, n):
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.shape[0] != n:
        raise DimensionError(f"B must have {n} rows, got {B.shape}")
    if B.shape[1] != 1:
        raise PreconditionError("only single-input feedback design is supported (B must be n x 1)")
    return B


def controllability_matrix(A, B):
    cols = [B]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def _match_error(target, achieved):
    left = list(achieved)
    worst = 0.0
    for lam in target:
        j = int(np.argmin([abs(lam - a) for a in left]))
        worst = max(worst, abs(lam - left.pop(j)))
    return worst


def place_poles(A, B, poles, return_info=False):
    """Gain K (1 x n) with eig(A + BK) equal to the requested poles (Ackermann formula)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = _column(B, n)
    spec = poles if isinstance(poles, PoleSpec) else PoleSpec(tuple(np.ravel(poles)))
    if spec.n != n:
        raise DimensionError(f"need {n} poles, got {spec.n}")
    if not spec.conjugate_closed():
        raise PreconditionError("poles must be closed under complex conjugation")
    Ctrb = controllability_matrix(A, B)
    if numerical_rank(Ctrb) < n:
        raise UncontrollableError("the pair (A, B) is not controllable")
    cond = float(np.linalg.cond(Ctrb))
    notes = []
    if cond > COND_WARN:
        msg = f"controllability matrix is ill-conditioned (cond = {cond:.3g})"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    coeffs = np.real(np.poly(np.array(spec.poles)))
    phiA = np.zeros_like(A)
    for c in coeffs:
        phiA = phiA @ A + c * np.eye(n)
    en = np.zeros(n)
    en[-1] = 1.0
    row = np.linalg.solve(Ctrb.T, en)
    K = -(row @ phiA).reshape(1, n)
    if return_info:
        return K, {"controllability_cond": cond, "warnings": notes}
    return K


def _resolvent_image(A, B, C, lam):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    if np.min(np.abs(eigs - lam)) <= 1e-10 * (1.0 + np.linalg.norm(A, 2)):
        raise PreconditionError(f"resolvent undefined: {lam} is an eigenvalue of A")
    v = np.linalg.solve(lam * np.eye(n) - A.astype(complex), _column(B, n).astype(complex))[:, 0]
    return v, np.asarray(C, dtype=float) @ v


def check_pole_admissibility(A, B, C, lam):
    """Whether C (lam I - A)^{-1} B has full support; returns ``(ok, support_count)``."""
    _, Cv = _resolvent_image(A, B, C, complex(lam))
    mags = np.abs(Cv)
    tol = 1e-9 * float(np.max(mags)) if mags.size else 0.0
    count = int(np.sum(mags > tol)) if tol > 0 else 0
    return count == len(Cv), count


def design_resilient_feedback(A, B, C, spec, verify_max_p=8):
    """Place the poles of ``spec`` while keeping every closed-loop mode visible to every sensor."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    B = _column(B, n)
    p = C.shape[0]
    if not isinstance(spec, PoleSpec):
        spec = PoleSpec(tuple(np.ravel(spec)))
    if not spec.conjugate_closed():
        raise PreconditionError("poles must be closed under complex conjugation")
    if not spec.distinct_magnitudes():
        raise PreconditionError("poles must have pairwise distinct magnitudes")

    fragile = []
    for lam in spec.poles:
        ok, _ = check_pole_admissibility(A, B, C, lam)
        _, Cv = _resolvent_image(A, B, C, lam)
        mags = np.abs(Cv)
        if not ok:
            i = int(np.argmin(mags))
            raise InadmissiblePoleError(
                f"pole {lam} is inadmissible: sensor {i + 1} does not see the closed-loop "
                f"eigenvector (|e_i^T C (lam I - A)^-1 B| = {mags[i]:.3g}); "
                f"consider a perturbed pole such as {lam * (1 + 1e-3)}",
                pole=lam, sensor=i + 1,
            )
        if np.min(mags) < FRAGILE_RTOL * np.linalg.norm(Cv):
            fragile.append(lam)

    K, info = place_poles(A, B, spec, return_info=True)
    Acl = A + B @ K
    lam_cl, V = np.linalg.eig(Acl)
    err = _match_error(spec.poles, lam_cl)
    notes = list(info["warnings"])
    tau = 1e-8 * (1.0 + np.linalg.norm(A, 2))
    if err > tau:
        notes.append(f"achieved poles deviate by {err:.3g} (> {tau:.3g})")
    counts = []
    for j in range(n):
        Cv = C @ V[:, j]
        mags = np.abs(Cv)
        counts.append(int(np.sum(mags > 1e-9 * max(float(np.max(mags)), 1e-300))))
    verified = all(c == p for c in counts) and err <= tau
    q_max = None
    if p <= verify_max_p:
        q_max = max_correctable_sensor_errors(LinearSystem(Acl, B, C), n).q_max
        verified = verified and q_max == math.ceil(p / 2 - 1)
    return FeedbackDesign(
        K=K,
        achieved_poles=lam_cl,
        eigenvector_supports=counts,
        resilience_verified=bool(verified),
        q_max=q_max,
        pole_error=float(err),
        fragile_poles=fragile,
        warnings=notes,
    )


def random_admissible_poles(A, B, C, rng, low=0.2, high=0.9, max_tries=1000, max_eig_cond=1e5):
    """Draw real stable poles with distinct magnitudes that pass the admissibility check.

    Draws whose closed-loop eigenvector basis has condition number above
    ``max_eig_cond`` are rejected too: clustered poles under a single input
    give a nearly defective A + BK whose computed spectrum drifts from the
    target by roughly that condition number times machine precision.
    """
    n = np.asarray(A).shape[0]
    for _ in range(max_tries):
        mags = np.sort(rng.uniform(low, high, n))
        if n > 1 and np.min(np.diff(mags)) < 1e-3 * high:
            continue
        poles = mags * rng.choice([-1.0, 1.0], n)
        try:
            if not all(check_pole_admissibility(A, B, C, lam)[0] for lam in poles):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                K = place_poles(A, B, poles)
        except PreconditionError:
            continue
        _, V = np.linalg.eig(np.asarray(A, dtype=float) + _column(B, n) @ K)
        if np.linalg.cond(V) <= max_eig_cond:
            return PoleSpec(tuple(poles))
    raise PreconditionError("could not find admissible poles")
