"""Independent reference computations used by the tests."""

import itertools

import numpy as np

PAPER_C_GRID = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


def brute_force_dual(G, C):
    """Exact SVDD dual optimum by enumerating every active set.

    Each sample is fixed at 0, fixed at C, or free; the free block is solved
    from the stationarity conditions with the equality constraint attached.
    The best feasible candidate is the global maximum since the objective is
    concave. Only usable for tiny N (3^N active sets).
    """
    n = G.shape[0]
    diag = np.diag(G)
    best_val, best_alpha = -np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        free = np.flatnonzero(pattern == 1)
        alpha = np.where(pattern == 2, C, 0.0)
        rest = 1.0 - alpha.sum()
        if free.size == 0:
            if abs(rest) > 1e-12:
                continue
        else:
            m = free.size
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = 2.0 * G[np.ix_(free, free)]
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            b = np.append(diag[free] - 2.0 * G[free] @ alpha, rest)
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            if np.abs(A @ sol - b).max() > 1e-9:
                continue
            alpha[free] = sol[:m]
        if alpha.min() < -1e-12 or alpha.max() > C + 1e-12:
            continue
        val = alpha @ diag - alpha @ G @ alpha
        if val > best_val:
            best_val, best_alpha = val, alpha
    return best_val, best_alpha


def random_instance(rng):
    """Random PSD Gram matrix with N in 2..8 and a grid C satisfying N*C >= 1."""
    n = int(rng.integers(2, 9))
    rank = int(rng.integers(1, n + 1))
    A = rng.normal(size=(n, rank)) * rng.uniform(0.2, 3.0)
    G = A @ A.T
    Cs = [c for c in PAPER_C_GRID if n * c >= 1.0]
    return G, float(rng.choice(Cs))


def finite_difference(f, P, h=1e-6):
    """Central differences of scalar f with respect to every entry of P."""
    out = np.empty_like(P)
    for idx in np.ndindex(P.shape):
        Pp, Pm = P.copy(), P.copy()
        Pp[idx] += h
        Pm[idx] -= h
        out[idx] = (f(Pp) - f(Pm)) / (2 * h)
    return out
