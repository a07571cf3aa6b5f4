"""Input validation helpers shared by the estimators and the solver APIs."""

from __future__ import annotations

import numpy as np

__all__ = ["check_parameters", "check_parameter", "check_basis", "derive_seed"]


def check_parameters(X, dim=None, domain=None):
    """Coerce ``X`` to a 2-D float array of parameter points ``(N, p)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of parameter points, got ndim={X.ndim}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"parameter points have {X.shape[1]} entries, expected {dim}")
    if domain is not None:
        for i, mu in enumerate(X):
            if not domain.contains(mu):
                raise ValueError(f"parameter point {i} lies outside the declared box")
    return X


def check_parameter(mu, dim=None):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if dim is not None and mu.shape[0] != dim:
        raise ValueError(f"parameter has {mu.shape[0]} entries, expected {dim}")
    return mu


def check_basis(U, n=None):
    U = np.asarray(U)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    if U.ndim != 2:
        raise ValueError("basis must be a 2-D array of column vectors")
    if n is not None and U.shape[0] != n:
        raise ValueError(f"basis has {U.shape[0]} rows, expected {n}")
    return U


def derive_seed(master, *stream):
    """Derive a child seed from a master seed and a stream path, reproducibly."""
    ss = np.random.SeedSequence([int(master), *map(int, stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
