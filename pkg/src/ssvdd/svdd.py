"""SVDD dual solver over an arbitrary Gram matrix.

The dual is

    maximize   sum_i a_i G_ii - sum_ij a_i a_j G_ij
    subject to sum_i a_i = 1,  0 <= a_i <= C

and is solved by sequential minimal optimization: each step moves weight
between the maximally KKT-violating pair, which keeps the equality
constraint satisfied exactly. A final active-set solve polishes the
converged iterate to machine precision when that does not break the box.
"""

from dataclasses import dataclass, field

import numba
import numpy as np

from .data import OUTLIER, TARGET
from .errors import (
    ConvergenceError,
    InfeasibleConstraintsError,
    InternalConsistencyError,
    SchemaError,
)

NEGATIVE_GUARD = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules for :func:`solve_dual`.

    ``kkt_tolerance`` is relative to the Gram scale ``max(1, max G_ii)``.
    ``max_passes`` counts sweeps of N pair updates each; ``None`` means 10 N.
    """

    kkt_tolerance: float = 1e-6
    max_passes: int = None
    sv_tolerance: float = 1e-6
    polish: bool = True

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.sv_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_passes is not None and self.max_passes < 1:
            raise ValueError("max_passes must be positive")


@dataclass(frozen=True, eq=False)
class SvddSolution:
    alpha: np.ndarray
    r_squared: float
    boundary_sv: np.ndarray
    outlier_sv: np.ndarray
    C: float
    gram: np.ndarray = field(repr=False)
    iterations: int = 0
    kkt_residual: float = 0.0

    @property
    def center_norm_sq(self):
        return float(self.alpha @ self.gram @ self.alpha)

    @property
    def support(self):
        return np.flatnonzero(self.alpha > 0)

    def train_distances(self):
        """Squared distance of every training representation to the center."""
        return _distances(self.alpha, self.gram)


@numba.njit(cache=True)
def _smo(G, C, alpha, tol, max_iter):
    n = G.shape[0]
    diag = np.empty(n)
    for k in range(n):
        diag[k] = G[k, k]
    # gradient of the minimization form  a'Ga - diag'a
    g = 2.0 * (G @ alpha) - diag
    gap = np.inf
    it = 0
    while it < max_iter:
        i = -1
        j = -1
        up = -np.inf
        low = np.inf
        for k in range(n):
            if alpha[k] < C and -g[k] > up:
                up = -g[k]
                i = k
            if alpha[k] > 0.0 and -g[k] < low:
                low = -g[k]
                j = k
        gap = up - low
        if i < 0 or j < 0 or gap <= tol:
            # guard against drift in the incrementally updated gradient
            g = 2.0 * (G @ alpha) - diag
            up = -np.inf
            low = np.inf
            for k in range(n):
                if alpha[k] < C and -g[k] > up:
                    up = -g[k]
                if alpha[k] > 0.0 and -g[k] < low:
                    low = -g[k]
            gap = up - low
            if gap <= tol:
                return it, gap
            continue
        curv = G[i, i] + G[j, j] - 2.0 * G[i, j]
        room_i = C - alpha[i]
        room_j = alpha[j]
        if curv > 1e-15:
            t = (g[j] - g[i]) / (2.0 * curv)
        else:
            t = np.inf
        if t >= room_i and room_i <= room_j:
            t = room_i
            alpha[i] = C
            alpha[j] -= t
        elif t >= room_j:
            t = room_j
            alpha[i] += t
            alpha[j] = 0.0
        else:
            alpha[i] += t
            alpha[j] -= t
        for k in range(n):
            g[k] += 2.0 * t * (G[k, i] - G[k, j])
        it += 1
    return it, gap


def _distances(alpha, G):
    return np.diag(G) - 2.0 * (G @ alpha) + alpha @ G @ alpha


def kkt_gap(alpha, G, C):
    """Largest violation: max dist over a<C minus min dist over a>0."""
    d = _distances(alpha, G)
    can_grow = alpha < C
    can_shrink = alpha > 0
    if not can_grow.any() or not can_shrink.any():
        return 0.0
    return float(max(0.0, d[can_grow].max() - d[can_shrink].min()))


def dual_objective(alpha, G):
    alpha = np.asarray(alpha, dtype=float)
    return float(alpha @ np.diag(G) - alpha @ G @ alpha)


def _polish(alpha, G, C, sv_tol, max_steps=None):
    """Primal active-set refinement of a near-optimal iterate.

    Weights within ``sv_tol`` of a bound are snapped to it; the remaining
    free block is then solved exactly, and blocking or violating indices are
    moved between the free and bound sets until the KKT conditions hold.
    Works in the minimization form ``a'Ga - diag'a``. Returns ``None`` if no
    feasible refinement is found.
    """
    n = alpha.size
    diag = np.diag(G)
    a = np.where(alpha <= sv_tol, 0.0, np.where(alpha >= C - sv_tol, C, alpha))
    free = (a > 0.0) & (a < C)
    if not free.any():
        return a if abs(a.sum() - 1.0) <= 1e-9 else None
    # restore the equality constraint on the free block
    a[free] += (1.0 - a.sum()) / free.sum()
    if a[free].min() < 0.0 or a[free].max() > C:
        return None
    steps = max_steps if max_steps is not None else 4 * n + 20
    scale = max(1.0, float(np.abs(diag).max()))
    for _ in range(steps):
        g = 2.0 * (G @ a) - diag
        F = np.flatnonzero(free)
        if F.size == 0:
            lower, upper = a <= 0.0, a >= C
            j_up = int(np.argmin(np.where(lower, g, np.inf)))
            if not lower.any() or kkt_gap(a, G, C) <= 1e-12 * scale:
                break
            free[j_up] = True
            continue
        m = F.size
        p = np.zeros(m)
        unbounded = False
        if m > 1:
            B = np.zeros((m + 1, m + 1))
            B[:m, :m] = 2.0 * G[np.ix_(F, F)]
            B[:m, m] = 1.0
            B[m, :m] = 1.0
            rhs = np.append(-g[F], 0.0)
            sol, *_ = np.linalg.lstsq(B, rhs, rcond=None)
            if np.abs(B @ sol - rhs).max() <= 1e-10 * scale:
                p = sol[:m]
            else:
                # flat direction with descending slope: follow it to a bound
                H = np.vstack([2.0 * G[np.ix_(F, F)], np.ones((1, m))])
                _, sv, Vt = np.linalg.svd(H)
                rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max())))
                N = Vt[rank:].T
                p = -N @ (N.T @ g[F])
                unbounded = True
        if np.abs(p).max(initial=0.0) > 1e-12:
            with np.errstate(divide="ignore", invalid="ignore"):
                up = np.where(p > 0, (C - a[F]) / p, np.inf)
                down = np.where(p < 0, -a[F] / p, np.inf)
            limits = np.minimum(up, down)
            k = int(np.argmin(limits))
            tau = limits[k] if unbounded else min(1.0, limits[k])
            if not np.isfinite(tau):
                return None
            a[F] += tau * p
            if tau < 1.0 or unbounded:
                a[F[k]] = C if p[k] > 0 else 0.0
                free[F[k]] = False
            # snap roundoff-level weights onto their bounds
            eps = 1e-13 * max(1.0, C)
            low, high = free & (a <= eps), free & (a >= C - eps)
            a[low], a[high] = 0.0, C
            free &= ~(low | high)
            if free.any():
                a[free] += (1.0 - a.sum()) / free.sum()
            continue
        # free block optimal: release the worst bound violator, if any
        mu = -float(np.mean(g[F]))
        red = g + mu
        viol = np.where(~free & (a <= 0.0), -red, 0.0) + np.where(~free & (a >= C), red, 0.0)
        j = int(np.argmax(viol))
        if viol[j] <= 1e-12 * scale:
            break
        free[j] = True
    else:
        return None
    if a.min() < 0.0 or a.max() > C or abs(a.sum() - 1.0) > 1e-9:
        return None
    return np.clip(a, 0.0, C)


def compute_radius(alpha, G, C, cfg=SolverConfig()):
    """Squared radius from the support vectors of a solved dual.

    Boundary support vectors (strictly inside the box) all sit on the
    sphere; their mean squared distance is used. With no boundary SV the
    smallest distance among the remaining support vectors is taken, which is
    the largest radius still consistent with the KKT conditions.
    """
    alpha = np.asarray(alpha, dtype=float)
    d = _distances(alpha, G)
    tol = cfg.sv_tolerance
    boundary = (alpha > tol) & (alpha < C - tol)
    if boundary.any():
        r2 = float(d[boundary].mean())
    else:
        r2 = float(d[alpha > tol].min())
    return max(r2, 0.0)


def solve_dual(G, C, cfg=SolverConfig()):
    """Maximize the SVDD dual over Gram matrix ``G`` with box bound ``C``.

    Parameters
    ----------
    G : ndarray, shape (N, N)
        Symmetric matrix of inner products of the training representations.
    C : float
        Upper bound on every dual weight. ``N * C`` must be at least 1.
    cfg : SolverConfig

    Returns
    -------
    SvddSolution

    Raises
    ------
    InfeasibleConstraintsError
        If ``N * C < 1``.
    ConvergenceError
        If the KKT gap is still above tolerance after ``max_passes`` sweeps.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] < 1:
        raise SchemaError(f"Gram matrix must be square and non-empty, got {G.shape}")
    n = G.shape[0]
    scale = max(1.0, float(np.abs(np.diag(G)).max()))
    if np.abs(G - G.T).max() > 1e-8 * scale:
        raise SchemaError("Gram matrix is not symmetric")
    if not np.all(np.isfinite(G)):
        raise SchemaError("Gram matrix has non-finite entries")
    C = float(C)
    if not C > 0 or n * C < 1.0 - 1e-12:
        raise InfeasibleConstraintsError(
            f"N*C = {n}*{C} < 1: no weights can sum to 1 under the box bound"
        )
    G = 0.5 * (G + G.T)
    C_eff = max(C, 1.0 / n)

    tol = cfg.kkt_tolerance * scale
    passes = cfg.max_passes if cfg.max_passes is not None else 10 * n
    max_iter = max(passes * n, 1000)

    alpha = np.full(n, min(1.0 / n, C_eff))
    if n == 1:
        iterations, gap = 0, 0.0
        alpha[:] = 1.0
    else:
        iterations, gap = _smo(G, C_eff, alpha, tol, max_iter)

    if cfg.polish and n > 1:
        polished = _polish(alpha, G, C_eff, cfg.sv_tolerance)
        if polished is not None:
            pgap = kkt_gap(polished, G, C_eff)
            if pgap <= max(gap, tol):
                alpha, gap = polished, pgap

    if gap > tol:
        raise ConvergenceError(
            f"SMO did not reach KKT gap {tol:.3g} in {iterations} updates (gap {gap:.3g})",
            alpha=alpha.copy(),
            kkt_residual=gap,
        )

    stol = cfg.sv_tolerance
    boundary = np.flatnonzero((alpha > stol) & (alpha < C_eff - stol))
    outliers = np.flatnonzero(alpha >= C_eff - stol)
    r2 = compute_radius(alpha, G, C_eff, cfg)
    alpha.setflags(write=False)
    G.setflags(write=False)
    return SvddSolution(
        alpha=alpha,
        r_squared=r2,
        boundary_sv=boundary,
        outlier_sv=outliers,
        C=C,
        gram=G,
        iterations=int(iterations),
        kkt_residual=float(gap),
    )


def distance_sq(sol, g_cross, g_self):
    """Squared distance of one query to the center.

    ``g_cross[i]`` is the inner product of the query with training
    representation ``i``; ``g_self`` is the query's squared norm.
    """
    return float(distance_sq_many(sol, np.asarray(g_cross, dtype=float)[:, None], [g_self])[0])


def distance_sq_many(sol, g_cross, g_self):
    """Vectorized :func:`distance_sq`; ``g_cross`` is N x M, one column per query."""
    g_cross = np.asarray(g_cross, dtype=float)
    g_self = np.asarray(g_self, dtype=float)
    if g_cross.ndim != 2 or g_cross.shape[0] != sol.alpha.shape[0]:
        raise SchemaError(
            f"cross inner products need {sol.alpha.shape[0]} rows, got shape {g_cross.shape}"
        )
    if g_self.shape != (g_cross.shape[1],):
        raise SchemaError("one self inner product per query required")
    cn = sol.center_norm_sq
    d = g_self - 2.0 * (sol.alpha @ g_cross) + cn
    guard = NEGATIVE_GUARD * max(1.0, cn, float(np.abs(g_self).max(initial=0.0)))
    if d.size and d.min() < -guard:
        raise InternalConsistencyError(f"negative squared distance {d.min():.3g}")
    return np.maximum(d, 0.0)


def classify(dist_sq, r_squared):
    return TARGET if dist_sq <= r_squared else OUTLIER
