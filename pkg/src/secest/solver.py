"""First-order solver for weighted sum-of-row-norms problems.

Solves ``minimize_x  sum_g c_g * ||(y - Phi x)_g||_r`` for r in {2, inf} by
over-relaxed ADMM on the splitting ``Phi x + z = y``.  The x-update is a
least-squares solve against a cached factorization, the z-update is the
group-wise proximal operator of the weighted mixed norm.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from secest.errors import DimensionError

INF = math.inf


def parse_norm(r):
    """Accept 2, 'inf', math.inf or np.inf and return 2 or math.inf."""
    if isinstance(r, str):
        r = r.strip().lower()
        if r in ("inf", "infty", "infinity", "max"):
            return INF
        r = float(r)
    if r == 2:
        return 2
    if r == INF:
        return INF
    raise ValueError(f"inner norm must be 2 or inf, got {r!r}")


def norm_label(r):
    return "inf" if r == INF else "2"


def group_norms(V, r):
    """Row-wise l_r norms of a 2-D array."""
    if V.shape[1] == 0:
        return np.zeros(V.shape[0])
    if r == INF:
        return np.max(np.abs(V), axis=1)
    return np.sqrt(np.einsum("ij,ij->i", V, V))


def project_l1_rows(V, radii):
    """Project every row of ``V`` onto the l1-ball of the matching radius.

    Sort-and-threshold (Duchi et al.); rows with radius <= 0 map to zero.
    """
    V = np.asarray(V, dtype=float)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (V.shape[0],))
    out = V.copy()
    if V.shape[1] == 0:
        return out
    absV = np.abs(V)
    inside = absV.sum(axis=1) <= radii
    dead = radii <= 0
    todo = ~(inside | dead)
    out[dead & ~inside] = 0.0
    out[dead & inside & (radii < 0)] = 0.0
    if np.any(todo):
        A = absV[todo]
        rad = radii[todo]
        srt = -np.sort(-A, axis=1)
        css = np.cumsum(srt, axis=1) - rad[:, None]
        idx = np.arange(1, A.shape[1] + 1)
        cond = srt - css / idx > 0
        k = A.shape[1] - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(A.shape[0]), k - 1] / k
        out[todo] = np.sign(V[todo]) * np.maximum(A - theta[:, None], 0.0)
    return out


def project_l1_ball(v, radius):
    """Euclidean projection of ``v`` onto {u : ||u||_1 <= radius}."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    return project_l1_rows(v.reshape(1, -1), [radius]).reshape(v.shape)


def prox_rows(V, thresholds, r):
    """Row-wise prox of ``t_g * ||.||_r`` for the rows of ``V``."""
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (V.shape[0],))
    if r == INF:
        # Moreau: prox of t||.||_inf is v minus projection onto the t-scaled l1 ball
        return V - project_l1_rows(V, thresholds)
    nrm = group_norms(V, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > thresholds, 1.0 - thresholds / nrm, 0.0)
    return V * scale[:, None]


def prox_row_norm(v, threshold, r=2):
    """Proximal operator of ``threshold * ||.||_r`` at ``v``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    r = parse_norm(r)
    v = np.asarray(v, dtype=float)
    if threshold == 0:
        return v.copy()
    return prox_rows(v.reshape(1, -1), [threshold], r).reshape(v.shape)


@dataclass(frozen=True)
class RowNormProblem:
    """``minimize_x sum_g weights[g] * ||(y - Phi x)_g||_r``.

    Rows of ``Phi``/``y`` are partitioned into consecutive groups of the given sizes.
    """

    Phi: np.ndarray
    y: np.ndarray
    group_sizes: tuple
    weights: np.ndarray
    r: float = 2

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        sizes = tuple(int(s) for s in self.group_sizes)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if Phi.shape[0] != y.size:
            raise DimensionError(f"Phi has {Phi.shape[0]} rows but y has {y.size} entries")
        if sum(sizes) != y.size or any(s < 0 for s in sizes):
            raise DimensionError("group sizes must partition the rows exactly")
        if w.size != len(sizes):
            raise DimensionError("one weight per group is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DimensionError("weights must be finite and nonnegative")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "r", parse_norm(self.r))

    @classmethod
    def from_block(cls, Phi, Y, weights=None, r=2):
        """Problem with p equal groups of size T; ``Phi`` rows are sensor-major."""
        Y = np.asarray(Y, dtype=float)
        p, T = Y.shape
        if weights is None:
            weights = np.ones(p)
        return cls(Phi, Y.reshape(-1), (T,) * p, weights, r)

    @property
    def n(self):
        return self.Phi.shape[1]

    def _runs(self):
        # consecutive groups of equal size, so proxes can be vectorized per run
        runs = []
        start = g0 = 0
        sizes = self.group_sizes
        while g0 < len(sizes):
            g1 = g0
            while g1 < len(sizes) and sizes[g1] == sizes[g0]:
                g1 += 1
            runs.append((start, g0, g1, sizes[g0]))
            start += sizes[g0] * (g1 - g0)
            g0 = g1
        return runs

    def residual_rows(self, x):
        return self.row_norms(self.y - self.Phi @ x)

    def row_norms(self, v):
        out = np.empty(len(self.group_sizes))
        for start, g0, g1, s in self._runs():
            blk = v[start:start + s * (g1 - g0)].reshape(g1 - g0, s)
            out[g0:g1] = group_norms(blk, self.r)
        return out

    def objective(self, x):
        return float(self.weights @ self.residual_rows(x))


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    max_iters: int = 20000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    alpha: float = 1.6
    adaptive_rho: bool = True
    certify_every: int = 20
    anderson: int = 5
    stall_iters: int = 2000
    tol_gap: float = 1e-9

    def __post_init__(self):
        if self.rho <= 0 or self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("rho and tolerances must be positive")
        if self.stall_iters < 0:
            raise ValueError("stall_iters must be >= 0 (0 disables)")
        if self.anderson < 0:
            raise ValueError("anderson memory must be >= 0")
        if self.certify_every < 0 or self.tol_gap <= 0:
            raise ValueError("certify_every must be >= 0 and tol_gap positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 1.0 <= self.alpha <= 1.8:
            raise ValueError("over-relaxation alpha must lie in [1, 1.8]")


@dataclass
class SolverResult:
    x_hat: np.ndarray
    residual_rows: np.ndarray
    iterations: int
    converged: bool
    primal_residual: float
    dual_residual: float
    objective: float
    z: np.ndarray = None
    dual: np.ndarray = None
    history: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "objective": self.objective,
            **self.diagnostics,
        }


class _Factor:
    """Cached solve of (Phi^T Phi + eps I) x = Phi^T w + eps x_prev."""

    def __init__(self, Phi):
        n = Phi.shape[1]
        G = Phi.T @ Phi
        s = np.linalg.svd(Phi, compute_uv=False) if Phi.size else np.zeros(0)
        smax = s[0] if s.size else 0.0
        rank = int(np.sum(s > max(Phi.shape) * np.finfo(float).eps * smax)) if s.size else 0
        self.rank_deficient = rank < n
        # tiny proximal term: negligible when Phi has full column rank, keeps it well-posed otherwise
        self.eps = 1e-10 * max(smax**2, 1e-300) if smax > 0 else 1.0
        Minv = np.linalg.inv(G + self.eps * np.eye(n))
        self.P = Minv @ Phi.T
        self.Q = self.eps * Minv

    def __call__(self, w, x_prev):
        return self.P @ w + self.Q @ x_prev


def _prox_all(problem, runs, v, thresholds):
    out = np.empty_like(v)
    for start, g0, g1, s in runs:
        stop = start + s * (g1 - g0)
        blk = v[start:stop].reshape(g1 - g0, s)
        out[start:stop] = prox_rows(blk, thresholds[g0:g1], problem.r).reshape(-1)
    return out


def dual_certificate(problem, u_scaled, rho):
    """Map the ADMM dual iterate into the product of weighted dual-norm balls."""
    g = -rho * u_scaled
    out = np.empty_like(g)
    for start, g0, g1, s in problem._runs():
        stop = start + s * (g1 - g0)
        blk = g[start:stop].reshape(g1 - g0, s)
        w = problem.weights[g0:g1]
        if problem.r == INF:
            proj = project_l1_rows(blk, w)
        else:
            nrm = group_norms(blk, 2)
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(nrm > w, w / nrm, 1.0)
            proj = blk * f[:, None]
        out[start:stop] = proj.reshape(-1)
    return out


def dual_norms(problem, g):
    """Per-group dual norms of ``g`` (l2 for r = 2, l1 for r = inf)."""
    out = np.empty(len(problem.group_sizes))
    for start, g0, g1, s in problem._runs():
        blk = g[start:start + s * (g1 - g0)].reshape(g1 - g0, s)
        out[g0:g1] = np.abs(blk).sum(axis=1) if problem.r == INF else group_norms(blk, 2)
    return out


def _feasible_dual(problem, factor, g):
    # project onto null(Phi^T), then shrink uniformly into the weighted dual-norm balls
    g = g - problem.Phi @ (factor.P @ g)
    dn = dual_norms(problem, g)
    active = dn > 0
    shrink = 1.0
    if np.any(active):
        shrink = min(1.0, float(np.min(problem.weights[active] / dn[active])))
    return shrink * g


def _certify(problem, factor, rows_of_group, z, g_raw, best_x):
    """Try to close the duality gap at a least-squares fit on the groups z leaves clean.

    Returns (x, objective, gap) for the better of the fit and ``best_x``.
    """
    Phi, y = problem.Phi, problem.y
    clean = problem.row_norms(z) == 0
    x = best_x
    obj = problem.objective(best_x)
    mask = clean[rows_of_group]
    if mask.any():
        xp = np.linalg.lstsq(Phi[mask], y[mask], rcond=None)[0]
        objp = problem.objective(xp)
        if objp < obj:
            x, obj = xp, objp
    g = _feasible_dual(problem, factor, g_raw)
    # weak duality holds up to the tiny leftover Phi^T g, bounded at the candidate
    lower = float(y @ g) - float(np.abs(Phi.T @ g) @ np.abs(x))
    return x, obj, obj - lower


def optimality_residual(problem, dual):
    """||Phi^T g|| for a dual-feasible g; zero certifies optimality."""
    return float(np.linalg.norm(problem.Phi.T @ dual))


class _Anderson:
    """Safeguarded type-II Anderson extrapolation of the ADMM fixed-point map.

    A proposal is kept only while the fixed-point residual keeps shrinking;
    otherwise the plain ADMM step is restored and the memory cleared.
    """

    REG = 1e-10
    MAX_STEP = 1e3

    def __init__(self, memory):
        self.memory = memory
        self.reset()

    def reset(self):
        self.states, self.resids = [], []
        self.fallback = None

    def step(self, s, Fs):
        if not self.memory:
            return Fs
        g = Fs - s
        gn = float(np.linalg.norm(g))
        if self.fallback is not None:
            plain, prev_gn = self.fallback
            self.fallback = None
            if gn > prev_gn:
                self.states, self.resids = [], []
                return plain
        self.states.append(s)
        self.resids.append(g)
        if len(self.states) > self.memory + 1:
            self.states.pop(0)
            self.resids.pop(0)
        if len(self.states) < 2:
            return Fs
        S = np.array(self.states).T
        G = np.array(self.resids).T
        dS, dG = np.diff(S, axis=1), np.diff(G, axis=1)
        # Tikhonov-regularized mixing weights
        H = dG.T @ dG
        H[np.diag_indices_from(H)] += self.REG * max(float(np.trace(H)), 1e-300)
        gamma = np.linalg.solve(H, dG.T @ g)
        step = (dS + dG) @ gamma
        # a saturated prox keeps the residual bounded far from the solution, so
        # the residual test alone cannot catch a runaway extrapolation
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > self.MAX_STEP * gn:
            self.reset()
            return Fs
        proposal = Fs - step
        self.fallback = (Fs, gn)
        return proposal


def solve(problem, config=None, warm_start=None):
    """Minimize the weighted sum of group norms of ``y - Phi x``."""
    if config is None:
        config = SolverConfig()
    Phi, y = problem.Phi, problem.y
    n = problem.n
    runs = problem._runs()
    factor = _Factor(Phi)
    rho = config.rho
    alpha = config.alpha
    scale = max(float(np.linalg.norm(y)), 1.0)
    eps_p = config.tol_primal * scale
    eps_d = config.tol_dual * scale

    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    Phix = Phi @ x
    z = y - Phix
    u = np.zeros_like(y)
    best_x, best_obj, best_z = x.copy(), float(problem.weights @ problem.row_norms(z)), z.copy()
    history = np.empty(config.max_iters)
    r_norm = s_norm = math.inf
    converged = False
    certified_gap = None
    rows_of_group = np.repeat(np.arange(len(problem.group_sizes)), problem.group_sizes)
    ny = y.size
    state = np.concatenate([z, u])
    accel = _Anderson(config.anderson)
    stalled = False
    last_gain_it, last_gain_obj = 0, best_obj
    it = 0
    for it in range(1, config.max_iters + 1):
        z_in, u_in = state[:ny], state[ny:]
        x = factor(y - z_in - u_in, x)
        Phix = Phi @ x
        h = alpha * Phix + (1.0 - alpha) * (y - z_in)
        z = _prox_all(problem, runs, y - h - u_in, problem.weights / rho)
        u = u_in + h + z - y
        mapped = np.concatenate([z, u])

        resid = y - Phix
        obj = float(problem.weights @ problem.row_norms(resid))
        if obj < best_obj:
            best_obj, best_x, best_z = obj, x.copy(), z.copy()
        history[it - 1] = best_obj

        r_norm = float(np.linalg.norm(Phix + z - y))
        s_norm = float(rho * np.linalg.norm(Phi.T @ (z - z_in)))
        done = r_norm <= eps_p and s_norm <= eps_d
        if done or (config.certify_every and it % config.certify_every == 0):
            xc, objc, gap = _certify(problem, factor, rows_of_group, z, -rho * u, best_x)
            if objc < best_obj:
                best_obj, best_x = objc, xc
                best_z = z.copy()
            history[it - 1] = best_obj
            if gap <= config.tol_gap * max(1.0, objc):
                converged, certified_gap = True, gap
                break
        if done:
            # residuals are small relative to |y|, which can hide a loose x; the
            # clean-group fit above sharpens it when the support is already right
            converged = True
            break
        if best_obj < last_gain_obj - config.tol_gap * max(1.0, abs(last_gain_obj)):
            last_gain_it, last_gain_obj = it, best_obj
        elif config.stall_iters and it - last_gain_it >= config.stall_iters:
            stalled = True
            break
        if config.adaptive_rho and it % 10 == 0:
            factor_rho = 1.0
            if r_norm > 10.0 * s_norm:
                factor_rho = 2.0
            elif s_norm > 10.0 * r_norm:
                factor_rho = 0.5
            if factor_rho != 1.0:
                rho *= factor_rho
                u = u / factor_rho
                mapped = np.concatenate([z, u])
                accel.reset()
                state = mapped
                continue
        state = accel.step(state, mapped)

    dual = dual_certificate(problem, u, rho)
    return SolverResult(
        x_hat=best_x,
        residual_rows=problem.residual_rows(best_x),
        iterations=it,
        converged=converged,
        primal_residual=r_norm,
        dual_residual=s_norm,
        objective=best_obj,
        z=best_z,
        dual=dual,
        history=history[:it].copy(),
        diagnostics={
            "rho_final": rho,
            "regularized": bool(factor.rank_deficient),
            "optimality_residual": optimality_residual(problem, dual),
            "certified_gap": certified_gap,
            "stalled": stalled,
        },
    )
