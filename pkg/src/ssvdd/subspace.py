"""Subspace SVDD: joint learning of a projection and a hypersphere.

Training alternates between solving the SVDD dual on the projected data and
a gradient step on the projection, re-orthonormalizing after every step.
The linear variant learns ``Q`` (d x D) acting on feature vectors; the kernel
variant learns coefficients ``W`` (d x N) acting on RBF kernel columns of the
training set.

Shape convention for the math helpers: ``M`` holds one sample per column
(``X`` transposed, D x N, in linear mode; the Gram matrix ``K`` in kernel
mode) and ``P`` is the projection applied to those columns.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import OUTLIER, TARGET, Standardizer
from .errors import (
    ConfigurationError,
    DegenerateProjectionError,
    InfeasibleConstraintsError,
    InsufficientDataError,
    SchemaError,
)
from .kernel import KernelSpec, rbf_cross, rbf_gram
from .svdd import SolverConfig, SvddSolution, distance_sq_many, kkt_gap, solve_dual

PSI_MODES = (1, 2, 3, 4)
MAX_RERANDOMIZE = 20


@dataclass(frozen=True)
class HyperParams:
    """Training configuration.

    ``psi=None`` (with ``d=None``) selects plain SVDD without a learned
    projection. ``kernel=None`` selects the linear variant.
    """

    C: float
    beta: float = 0.0
    eta: float = 0.1
    d: int = None
    psi: int = None
    k_max: int = 50
    seed: int = 0
    kernel: KernelSpec = None

    def __post_init__(self):
        if not (0.0 < self.C <= 1.0):
            raise ConfigurationError(f"C must lie in (0, 1], got {self.C}")
        if self.beta < 0 or not math.isfinite(self.beta):
            raise ConfigurationError(f"beta must be non-negative, got {self.beta}")
        if self.psi is None:
            if self.d is not None:
                raise ConfigurationError("plain SVDD (psi=None) takes no subspace dimension d")
            return
        if self.psi not in PSI_MODES:
            raise ConfigurationError(f"psi must be one of {PSI_MODES}, got {self.psi!r}")
        if self.d is None or int(self.d) != self.d or self.d < 1:
            raise ConfigurationError(f"d must be a positive integer, got {self.d!r}")
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")
        if self.k_max < 1:
            raise ConfigurationError(f"k_max must be positive, got {self.k_max}")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @property
    def mode(self):
        return "linear" if self.kernel is None else "kernel"

    @property
    def subspace(self):
        return self.psi is not None

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = None if self.kernel is None else {"sigma": self.kernel.sigma}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("kernel") is not None:
            d["kernel"] = KernelSpec(**d["kernel"])
        return cls(**d)


@dataclass
class TrainReport:
    updates: int = 0
    objective_trace: list = field(default_factory=list)
    orthonormality_errors: list = field(default_factory=list)
    solver_iterations: list = field(default_factory=list)
    rerandomized_rows: int = 0
    boundary_sv: int = 0
    outlier_sv: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SsvddModel:
    params: HyperParams
    solution: SvddSolution
    projection: np.ndarray = None
    standardizer: Standardizer = None
    train_inputs: np.ndarray = None
    train_repr: np.ndarray = field(default=None, repr=False)
    n_features: int = 0
    report: TrainReport = field(default_factory=TrainReport, compare=False)

    @property
    def mode(self):
        return self.params.mode

    @property
    def r_squared(self):
        return self.solution.r_squared

    @property
    def center(self):
        """Hypersphere center in the representation space."""
        return self.train_repr @ self.solution.alpha

    def to_dict(self):
        sol = self.solution
        return {
            "format": "ssvdd-model",
            "version": __version__,
            "mode": self.mode,
            "params": self.params.to_dict(),
            "n_features": self.n_features,
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "projection": None if self.projection is None else self.projection.tolist(),
            "train_inputs": None if self.train_inputs is None else self.train_inputs.tolist(),
            # linear mode keeps projected training points instead of raw rows
            "train_repr": self.train_repr.tolist() if self.train_inputs is None else None,
            "solution": {
                "alpha": sol.alpha.tolist(),
                "r_squared": sol.r_squared,
                "C": sol.C,
                "boundary_sv": sol.boundary_sv.tolist(),
                "outlier_sv": sol.outlier_sv.tolist(),
                "iterations": sol.iterations,
                "kkt_residual": sol.kkt_residual,
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "ssvdd-model":
            raise SchemaError("not an ssvdd model document")
        params = HyperParams.from_dict(doc["params"])
        std = doc.get("standardizer")
        std = None if std is None else Standardizer.from_dict(std)
        P = doc.get("projection")
        P = None if P is None else np.asarray(P, dtype=float)
        X = doc.get("train_inputs")
        X = None if X is None else np.asarray(X, dtype=float)
        if X is not None:
            M = rbf_gram(X, params.kernel)
            Y = M if P is None else P @ M
        else:
            Y = np.asarray(doc["train_repr"], dtype=float)
        s = doc["solution"]
        sol = SvddSolution(
            alpha=np.asarray(s["alpha"], dtype=float),
            r_squared=float(s["r_squared"]),
            boundary_sv=np.asarray(s["boundary_sv"], dtype=np.int64),
            outlier_sv=np.asarray(s["outlier_sv"], dtype=np.int64),
            C=float(s["C"]),
            gram=_gram_of(Y, X is not None and P is None),
            iterations=int(s["iterations"]),
            kkt_residual=float(s["kkt_residual"]),
        )
        return cls(
            params=params,
            solution=sol,
            projection=P,
            standardizer=std,
            train_inputs=X,
            train_repr=Y,
            n_features=int(doc["n_features"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _gram_of(Y, plain_kernel):
    # plain kernel SVDD works on K directly; everything else on Y'Y
    G = Y if plain_kernel else Y.T @ Y
    return 0.5 * (G + G.T)


def orthonormalize(M):
    """Orthonormal basis of the row space of ``M`` via QR, then row l2-normalization.

    Signs are chosen so that each output row has a positive component along
    its input row, which keeps rows from flipping between iterations.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] > M.shape[1]:
        raise DegenerateProjectionError(f"cannot orthonormalize {M.shape} rows in that dimension")
    Qc, R = np.linalg.qr(M.T)
    r = np.diag(R)
    scale = max(np.linalg.norm(M, axis=1).max(), np.finfo(float).tiny)
    dependent = np.flatnonzero(np.abs(r) <= 1e-10 * scale)
    if dependent.size or not np.all(np.isfinite(R)):
        raise DegenerateProjectionError(
            f"projection rows {dependent.tolist()} are linearly dependent", dependent
        )
    Q = (Qc * np.sign(r)).T
    # C order, so products match those of a reloaded model bit for bit
    return np.ascontiguousarray(Q / np.linalg.norm(Q, axis=1, keepdims=True))


def init_projection(d, dim, seed):
    """Random Gaussian projection of shape (d, dim), orthonormalized.

    ``seed`` may be an integer or a ``numpy.random.Generator`` (whose state
    advances).
    """
    if not 1 <= d <= dim:
        raise ConfigurationError(f"subspace dimension d={d} must satisfy 1 <= d <= {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return orthonormalize(rng.standard_normal((d, dim)))


def lambda_vector(psi, alpha, C, sv_tol=1e-6):
    """Per-sample weights of the variance regularizer."""
    alpha = np.asarray(alpha, dtype=float)
    if psi == 1:
        return np.zeros_like(alpha)
    if psi == 2:
        return np.ones_like(alpha)
    if psi == 3:
        return alpha.copy()
    if psi == 4:
        boundary = (alpha > sv_tol) & (alpha < C - sv_tol)
        return np.where(boundary, alpha, 0.0)
    raise ConfigurationError(f"unknown regularizer mode {psi!r}")


def _check_shapes(M, P, alpha, lam):
    if M.ndim != 2 or P.ndim != 2 or P.shape[1] != M.shape[0]:
        raise SchemaError(f"projection {P.shape} incompatible with inputs {M.shape}")
    n = M.shape[1]
    if alpha.shape != (n,) or lam.shape != (n,):
        raise SchemaError(f"alpha and lambda must have length {n}")


def _gradient(M, P, alpha, lam, beta):
    M = np.asarray(M, dtype=float)
    P = np.asarray(P, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    lam = np.asarray(lam, dtype=float)
    _check_shapes(M, P, alpha, lam)
    Y = P @ M
    grad = 2.0 * (Y * alpha) @ M.T - 2.0 * np.outer(Y @ alpha, M @ alpha)
    return grad + beta * (2.0 * np.outer(Y @ lam, M @ lam))


def gradient_linear(X, Q, alpha, lam, beta):
    """Gradient of the augmented objective w.r.t. ``Q``; ``X`` is D x N."""
    return _gradient(X, Q, alpha, lam, beta)


def gradient_kernel(K, W, alpha, lam, beta):
    """Gradient of the augmented objective w.r.t. ``W``; ``K`` is the N x N Gram."""
    return _gradient(K, W, alpha, lam, beta)


def augmented_objective(M, P, alpha, lam, beta):
    """Dual objective on projected data plus ``beta`` times the variance trace term."""
    M = np.asarray(M, dtype=float)
    P = np.asarray(P, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    lam = np.asarray(lam, dtype=float)
    _check_shapes(M, P, alpha, lam)
    Y = P @ M
    ya = Y @ alpha
    yl = Y @ lam
    return float(alpha @ (Y * Y).sum(0) - ya @ ya + beta * (yl @ yl))


def orthonormality_error(P):
    return float(np.abs(P @ P.T - np.eye(P.shape[0])).max())


def _reorthonormalize(P, rng, report):
    for _ in range(MAX_RERANDOMIZE):
        try:
            return orthonormalize(P)
        except DegenerateProjectionError as exc:
            rows = list(exc.dependent_rows) or list(range(P.shape[0]))
            P = P.copy()
            P[rows] = rng.standard_normal((len(rows), P.shape[1]))
            report.rerandomized_rows += len(rows)
    raise DegenerateProjectionError("projection stayed rank deficient after re-randomization")


def train(X_target, params, solver_cfg=SolverConfig(), standardize=True, init=None,
          standardizer=None):
    """Fit a (subspace) SVDD model on target-class rows.

    Parameters
    ----------
    X_target : ndarray, shape (N, D)
        Training rows, all from the target class.
    params : HyperParams
    solver_cfg : SolverConfig
    standardize : bool
        Z-score features with statistics of ``X_target``; the statistics are
        stored in the model and applied to queries.
    standardizer : Standardizer, optional
        Pre-fitted statistics (e.g. from the whole training split, negatives
        included); overrides ``standardize``.
    init : ndarray, optional
        Initial projection replacing the random draw; it is orthonormalized
        like the random one.
    """
    X = np.asarray(X_target, dtype=float)
    if X.ndim != 2:
        raise SchemaError("X_target must be a 2-D matrix")
    n, D = X.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 target rows, got {n}")
    if n * params.C < 1.0 - 1e-12:
        raise InfeasibleConstraintsError(
            f"N*C = {n}*{params.C} < 1: C too small for {n} training rows"
        )
    std = standardizer
    if std is None and standardize:
        std = Standardizer.fit(X)
    Xs = std.apply(X) if std is not None else X

    if params.kernel is None:
        M = np.ascontiguousarray(Xs.T)
        limit, what = D, "D (number of features)"
    else:
        M = rbf_gram(Xs, params.kernel)
        limit, what = n, "N (number of training rows)"

    report = TrainReport()
    common = dict(
        params=params,
        standardizer=std,
        train_inputs=None if params.kernel is None else Xs,
        n_features=D,
        report=report,
    )

    if not params.subspace:
        sol = solve_dual(_gram_of(M, params.kernel is not None), params.C, solver_cfg)
        report.solver_iterations.append(sol.iterations)
        report.boundary_sv, report.outlier_sv = sol.boundary_sv.size, sol.outlier_sv.size
        return SsvddModel(solution=sol, train_repr=M, **common)

    if params.d > limit:
        raise ConfigurationError(
            f"{params.mode} mode requires d <= {what}; got d={params.d} > {limit}"
        )
    rng = np.random.default_rng(params.seed)
    if init is None:
        P = init_projection(params.d, limit, rng)
    else:
        P = np.array(init, dtype=float)
        if P.shape != (params.d, limit):
            raise SchemaError(f"initial projection must be {(params.d, limit)}, got {P.shape}")
        P = _reorthonormalize(P, rng, report)
    report.orthonormality_errors.append(orthonormality_error(P))

    for _ in range(params.k_max - 1):
        Y = P @ M
        sol = solve_dual(_gram_of(Y, False), params.C, solver_cfg)
        report.solver_iterations.append(sol.iterations)
        lam = lambda_vector(params.psi, sol.alpha, params.C, solver_cfg.sv_tolerance)
        report.objective_trace.append(augmented_objective(M, P, sol.alpha, lam, params.beta))
        P = P - params.eta * _gradient(M, P, sol.alpha, lam, params.beta)
        P = _reorthonormalize(P, rng, report)
        report.orthonormality_errors.append(orthonormality_error(P))
        report.updates += 1

    Y = P @ M
    sol = solve_dual(_gram_of(Y, False), params.C, solver_cfg)
    report.solver_iterations.append(sol.iterations)
    report.boundary_sv, report.outlier_sv = sol.boundary_sv.size, sol.outlier_sv.size
    return SsvddModel(solution=sol, projection=P, train_repr=Y, **common)


def represent(model, X_query):
    """Map raw query rows into the model's representation space.

    Returns the representations (one column per query) and, for plain kernel
    SVDD, the kernel block itself.
    """
    Xq = np.asarray(X_query, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[None, :]
    if Xq.ndim != 2 or Xq.shape[1] != model.n_features:
        raise SchemaError(
            f"query has {Xq.shape[-1]} features, model was trained on {model.n_features}"
        )
    if model.standardizer is not None:
        Xq = model.standardizer.apply(Xq)
    if model.params.kernel is None:
        Mq = Xq.T
    else:
        Mq = rbf_cross(model.train_inputs, Xq, model.params.kernel)
    return Mq if model.projection is None else model.projection @ Mq


def predict(model, X_query):
    """Label and squared center distance for every query row.

    Returns
    -------
    labels : ndarray of str
        ``"target"`` where the distance is within the squared radius.
    dist_sq : ndarray of float
    """
    Yq = represent(model, X_query)
    plain_kernel = model.projection is None and model.params.kernel is not None
    if plain_kernel:
        g_cross = Yq
        g_self = np.ones(Yq.shape[1])
    else:
        g_cross = model.train_repr.T @ Yq
        g_self = (Yq * Yq).sum(0)
    d2 = distance_sq_many(model.solution, g_cross, g_self)
    labels = np.where(d2 <= model.solution.r_squared, TARGET, OUTLIER)
    return labels, d2


def final_kkt_gap(model):
    sol = model.solution
    return kkt_gap(sol.alpha, sol.gram, max(sol.C, 1.0 / sol.alpha.size))
