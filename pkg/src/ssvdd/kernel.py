"""RBF Gram matrices."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigurationError, MalformedInputError, SchemaError


@dataclass(frozen=True)
class KernelSpec:
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigurationError(f"sigma must be positive and finite, got {self.sigma}")


def _check(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise SchemaError(f"{name} must be 2-D")
    if not np.all(np.isfinite(X)):
        raise MalformedInputError(f"{name} contains non-finite values")
    return X


def rbf_gram(X, spec):
    """K[i, j] = exp(-||x_i - x_j||^2 / sigma^2), exactly symmetric with unit diagonal."""
    X = _check(X, "X")
    if X.shape[0] < 1:
        raise SchemaError("X needs at least one row")
    # one evaluation per unordered pair, mirrored
    K = squareform(np.exp(-pdist(X, "sqeuclidean") / spec.sigma**2))
    np.fill_diagonal(K, 1.0)
    return K


def rbf_cross(X_train, X_query, spec):
    """Train-by-query kernel block; column j is k_* for query row j."""
    X_train = _check(X_train, "X_train")
    X_query = _check(X_query, "X_query")
    if X_train.shape[1] != X_query.shape[1]:
        raise SchemaError(
            f"column mismatch: train has {X_train.shape[1]}, query has {X_query.shape[1]}"
        )
    return np.exp(-cdist(X_train, X_query, "sqeuclidean") / spec.sigma**2)
