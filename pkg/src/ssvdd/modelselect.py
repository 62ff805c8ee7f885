"""Metrics, cross-validated grid search and the multi-partition benchmark."""

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .data import Standardizer, make_partitions, mean_pairwise_distance, stratified_folds
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateFoldError,
    DegenerateProjectionError,
    InfeasibleConstraintsError,
    NoPositivesError,
)
from .kernel import KernelSpec
from .subspace import HyperParams, predict, train
from .svdd import SolverConfig


def precision(tp, fp):
    return tp / (tp + fp) if tp + fp > 0 else 0.0


def recall(tp, p):
    if p == 0:
        raise NoPositivesError("recall is undefined without positive samples")
    return tp / p


def f1(prec, rec):
    return 2.0 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0


@dataclass(frozen=True)
class Scores:
    tp: int
    fp: int
    p: int
    n: int

    @classmethod
    def from_predictions(cls, predicted_target, is_target):
        predicted_target = np.asarray(predicted_target, dtype=bool)
        is_target = np.asarray(is_target, dtype=bool)
        return cls(
            tp=int((predicted_target & is_target).sum()),
            fp=int((predicted_target & ~is_target).sum()),
            p=int(is_target.sum()),
            n=int(is_target.size),
        )

    @property
    def precision(self):
        return precision(self.tp, self.fp)

    @property
    def recall(self):
        return recall(self.tp, self.p)

    @property
    def f1(self):
        return f1(self.precision, self.recall)

    @property
    def all_positive(self):
        return self.tp + self.fp == self.n


# ---------------------------------------------------------------------------
# methods and grids

PSI_NAMES = {1: "psi1", 2: "psi2", 3: "psi3", 4: "psi4"}


@dataclass(frozen=True)
class Method:
    name: str
    kernel: bool
    psi: int = None

    @property
    def subspace(self):
        return self.psi is not None


METHODS = {}
for _kernel in (False, True):
    _mode = "kernel" if _kernel else "linear"
    METHODS[f"svdd-{_mode}"] = Method(f"svdd-{_mode}", _kernel)
    for _psi in (1, 2, 3, 4):
        _name = f"ssvdd-{_mode}-psi{_psi}"
        METHODS[_name] = Method(_name, _kernel, _psi)
METHOD_ORDER = tuple(METHODS)


def get_method(name):
    try:
        return METHODS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown method {name!r}; choose from {', '.join(METHOD_ORDER)}"
        ) from None


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter ranges searched by cross-validation.

    ``d_values=None`` means ``1..min(10, D)``. For regularizer mode 1 the
    beta axis is collapsed to a single value since it cannot change the
    model.
    """

    C_values: tuple = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    beta_exponents: tuple = tuple(range(-4, 5))
    sigma_exponents: tuple = tuple(range(-3, 4))
    d_values: tuple = None
    psi_modes: tuple = (1, 2, 3, 4)
    eta: float = 0.1
    k_max: int = 50

    def __post_init__(self):
        for name in ("C_values", "beta_exponents", "sigma_exponents", "psi_modes"):
            if not len(getattr(self, name)):
                raise ConfigurationError(f"grid axis {name} is empty")
        if self.d_values is not None and not len(self.d_values):
            raise ConfigurationError("grid axis d_values is empty")

    def dims(self, n_features):
        if self.d_values is not None:
            return tuple(self.d_values)
        return tuple(range(1, min(10, n_features) + 1))

    def to_dict(self):
        return {
            "C_values": list(self.C_values),
            "beta_exponents": list(self.beta_exponents),
            "sigma_exponents": list(self.sigma_exponents),
            "d_values": None if self.d_values is None else list(self.d_values),
            "psi_modes": list(self.psi_modes),
            "eta": self.eta,
            "k_max": self.k_max,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("C_values", "beta_exponents", "sigma_exponents", "psi_modes"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("d_values") is not None:
            d["d_values"] = tuple(d["d_values"])
        return cls(**d)


@dataclass(frozen=True, order=True)
class Candidate:
    """One grid point; field order is the tie-break order."""

    d: int
    C: float
    beta: float
    sigma_exponent: int

    def params(self, method, grid, X_target, seed):
        """Concrete hyperparameters, with sigma scaled by the mean training distance."""
        kernel = None
        if method.kernel:
            base = mean_pairwise_distance(X_target)
            if base <= 0:
                base = 1.0
            kernel = KernelSpec(10.0**self.sigma_exponent * base)
        if not method.subspace:
            return HyperParams(C=self.C, kernel=kernel, seed=seed)
        return HyperParams(
            C=self.C,
            beta=self.beta,
            eta=grid.eta,
            d=self.d,
            psi=method.psi,
            k_max=grid.k_max,
            seed=seed,
            kernel=kernel,
        )

    def to_dict(self):
        return {"d": self.d, "C": self.C, "beta": self.beta, "sigma_exponent": self.sigma_exponent}


def candidates(method, grid, n_features):
    """Grid points relevant to ``method``, in tie-break order."""
    Cs = tuple(grid.C_values)
    sig = tuple(grid.sigma_exponents) if method.kernel else (0,)
    if not method.subspace:
        dims, betas = (0,), (0.0,)
    else:
        dims = grid.dims(n_features)
        betas = (0.0,) if method.psi == 1 else tuple(10.0**l for l in grid.beta_exponents)
    out = [Candidate(d, c, b, s) for d in dims for c in Cs for b in betas for s in sig]
    return sorted(out)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class Counters:
    evaluations: int = 0
    solver_failures: int = 0
    infeasible: int = 0
    rerandomized_rows: int = 0
    all_positive_folds: int = 0

    def add(self, other):
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def to_dict(self):
        return dict(vars(self))


@dataclass
class CVResult:
    best: Candidate
    mean_f1: float
    fold_f1: list
    n_candidates: int
    counters: Counters
    evaluations_per_candidate: list = field(default_factory=list, repr=False)


def fit_and_score(method, cand, grid, X_fit, std, X_eval, y_eval, seed, solver_cfg, counters):
    """Train one candidate on target rows and score it; ``None`` if infeasible."""
    Xs_fit = std.apply(X_fit) if std is not None else X_fit
    try:
        params = cand.params(method, grid, Xs_fit, seed)
        model = train(X_fit, params, solver_cfg, standardizer=std, standardize=False)
    except ConfigurationError:
        # N*C < 1 or d beyond the fold's rank
        counters.infeasible += 1
        return None, None
    except (ConvergenceError, DegenerateProjectionError):
        counters.solver_failures += 1
        return Scores(0, 0, int(np.sum(y_eval)), len(y_eval)), None
    counters.rerandomized_rows += model.report.rerandomized_rows
    labels, _ = predict(model, X_eval)
    return Scores.from_predictions(labels == "target", y_eval), model


_WORK = {}


def _init_worker(state):
    _WORK.clear()
    _WORK.update(state)


def _eval_candidate(idx):
    w = _WORK
    counters = Counters()
    scores = []
    for fold in w["folds"]:
        s, _ = fit_and_score(
            w["method"], w["cands"][idx], w["grid"], fold["X_fit"], fold["std"],
            fold["X_eval"], fold["y_eval"], w["seed"], w["solver_cfg"], counters,
        )
        counters.evaluations += 1
        if s is None:
            scores.append(None)
            continue
        if s.all_positive:
            counters.all_positive_folds += 1
        scores.append(s.f1)
    return scores, counters


def _fold_data(X, is_target, fold_of, n_folds, standardize):
    folds = []
    for f in range(n_folds):
        held = fold_of == f
        if not is_target[held].any():
            raise DegenerateFoldError(f"fold {f} has no validation positives")
        fit_rows = ~held
        if is_target[fit_rows].sum() < 2:
            raise DegenerateFoldError(f"fold {f} leaves fewer than 2 training targets")
        std = Standardizer.fit(X[fit_rows]) if standardize else None
        folds.append(
            {
                "X_fit": X[fit_rows & is_target],
                "std": std,
                "X_eval": X[held],
                "y_eval": is_target[held],
            }
        )
    return folds


def cross_validate(X, is_target, method, grid, folds=5, seed=0, standardize=True,
                   solver_cfg=SolverConfig(), jobs=1):
    """Pick the candidate with the best mean validation F1.

    Folds are stratified on the target/outlier label so every validation
    fold scores false positives too. Each candidate trains on the fold's
    target rows only. Ties go to smaller d, then C, beta and sigma exponent.

    Parameters
    ----------
    X : ndarray, shape (N, D)
        Training-split rows, targets and outliers.
    is_target : ndarray of bool
    method : Method or str
    grid : GridSpec
    """
    method = get_method(method) if isinstance(method, str) else method
    X = np.asarray(X, dtype=float)
    is_target = np.asarray(is_target, dtype=bool)
    if is_target.sum() < folds:
        raise DegenerateFoldError(f"need at least {folds} target rows for {folds}-fold CV")
    fold_of = stratified_folds(is_target.astype(int), folds, seed)
    fold_data = _fold_data(X, is_target, fold_of, folds, standardize)
    cands = candidates(method, grid, X.shape[1])
    state = {
        "method": method, "cands": cands, "grid": grid, "folds": fold_data,
        "seed": seed, "solver_cfg": solver_cfg,
    }
    if jobs > 1 and len(cands) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(state,)) as ex:
            results = list(ex.map(_eval_candidate, range(len(cands)),
                                  chunksize=max(1, len(cands) // (4 * jobs))))
    else:
        _init_worker(state)
        results = [_eval_candidate(i) for i in range(len(cands))]

    counters = Counters()
    best, best_score, best_folds = None, -math.inf, None
    per_candidate = []
    for cand, (scores, c) in zip(cands, results):
        counters.add(c)
        per_candidate.append(c.evaluations)
        if any(s is None for s in scores):
            continue
        score = float(np.mean(scores))
        # candidates are pre-sorted by the tie-break key, so strict > keeps the first
        if score > best_score:
            best, best_score, best_folds = cand, score, scores
    if best is None:
        raise InfeasibleConstraintsError(
            f"no feasible candidate for {method.name}: each violates N*C >= 1 or the d bound"
        )
    return CVResult(best, best_score, best_folds, len(cands), counters, per_candidate)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class PartitionResult:
    partition: int
    scores: Scores
    candidate: Candidate
    params: HyperParams
    cv_f1: float

    def to_dict(self):
        s = self.scores
        return {
            "partition": self.partition,
            "f1": s.f1,
            "precision": s.precision,
            "recall": s.recall,
            "tp": s.tp,
            "fp": s.fp,
            "p": s.p,
            "n_test": s.n,
            "all_positive": s.all_positive,
            "cv_f1": self.cv_f1,
            "candidate": self.candidate.to_dict(),
            "params": self.params.to_dict(),
        }


@dataclass
class MethodReport:
    method: str
    partitions: list = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)

    def f1_values(self):
        return np.array([p.scores.f1 for p in self.partitions])

    @property
    def mean_f1(self):
        return float(np.mean(self.f1_values()))

    @property
    def std_f1(self):
        return float(np.std(self.f1_values()))

    @property
    def std_f1_sample(self):
        v = self.f1_values()
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    @property
    def all_positive_partitions(self):
        return [p.partition for p in self.partitions if p.scores.all_positive]

    def to_dict(self):
        return {
            "method": self.method,
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "std_f1_sample": self.std_f1_sample,
            "mean_precision": float(np.mean([p.scores.precision for p in self.partitions])),
            "mean_recall": float(np.mean([p.scores.recall for p in self.partitions])),
            "all_positive_partitions": self.all_positive_partitions,
            "counters": self.counters.to_dict(),
            "partitions": [p.to_dict() for p in self.partitions],
        }


@dataclass
class EvalReport:
    dataset: str
    methods: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    sample_std: bool = False

    def to_dict(self):
        return {
            "format": "ssvdd-report",
            "version": __version__,
            "dataset": self.dataset,
            "std_convention": "sample" if self.sample_std else "population",
            "config": self.config,
            "methods": [self.methods[m].to_dict() for m in METHOD_ORDER if m in self.methods],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "partition", "f1", "precision", "recall", "tp", "fp",
                    "p", "n_test", "all_positive", "C", "beta", "d", "sigma", "cv_f1"])
        for name in METHOD_ORDER:
            if name not in self.methods:
                continue
            for pr in self.methods[name].partitions:
                s, hp = pr.scores, pr.params
                w.writerow([
                    self.dataset, name, pr.partition, repr(s.f1), repr(s.precision),
                    repr(s.recall), s.tp, s.fp, s.p, s.n, int(s.all_positive), repr(hp.C),
                    repr(hp.beta) if hp.subspace else "", hp.d if hp.subspace else "",
                    repr(hp.kernel.sigma) if hp.kernel else "", repr(pr.cv_f1),
                ])
        return buf.getvalue()

    def to_markdown(self):
        lines = [
            f"| {self.dataset} | mean F1 | std F1 | all-positive partitions |",
            "|---|---|---|---|",
        ]
        for name in METHOD_ORDER:
            if name not in self.methods:
                continue
            m = self.methods[name]
            std = m.std_f1_sample if self.sample_std else m.std_f1
            flags = ",".join(map(str, m.all_positive_partitions)) or "-"
            lines.append(f"| {name} | {m.mean_f1:.3f} | {std:.3f} | {flags} |")
        return "\n".join(lines) + "\n"


def benchmark(ds, grid, methods, split_spec, name="dataset", folds=5, standardize=True,
              solver_cfg=SolverConfig(), jobs=1, sample_std=False, progress=None):
    """Full protocol: per partition, cross-validate, retrain on all training targets, test.

    Binarization is carried by ``ds`` (a OneClassDataset); partitions are
    stratified over the original classes.
    """
    method_objs = sorted({get_method(m) if isinstance(m, str) else m for m in methods},
                         key=lambda m: METHOD_ORDER.index(m.name))
    report = EvalReport(dataset=name, sample_std=sample_std)
    if not method_objs:
        return report
    X = ds.features
    y = ds.is_target
    parts = make_partitions(ds, split_spec)
    for method in method_objs:
        report.methods[method.name] = MethodReport(method.name)
    for p, (tr, te) in enumerate(parts):
        cv_seed = split_spec.seed * 1000 + p
        std = Standardizer.fit(X[tr]) if standardize else None
        for method in method_objs:
            mrep = report.methods[method.name]
            cv = cross_validate(X[tr], y[tr], method, grid, folds=folds, seed=cv_seed,
                                standardize=standardize, solver_cfg=solver_cfg, jobs=jobs)
            mrep.counters.add(cv.counters)
            X_fit = X[tr][y[tr]]
            Xs_fit = std.apply(X_fit) if std is not None else X_fit
            params = cv.best.params(method, grid, Xs_fit, split_spec.seed)
            model = train(X_fit, params, solver_cfg, standardizer=std, standardize=False)
            mrep.counters.rerandomized_rows += model.report.rerandomized_rows
            labels, _ = predict(model, X[te])
            scores = Scores.from_predictions(labels == "target", y[te])
            mrep.partitions.append(PartitionResult(p, scores, cv.best, params, cv.mean_f1))
            if progress is not None:
                progress(f"{name} partition {p} {method.name}: F1={scores.f1:.3f}")
    return report
