"""Symmetric positive-definite helpers with ridge fallback."""

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import RidgeApplied, SingularPrecision

RIDGE = 1e-10


def _factor(A):
    try:
        return cho_factor(A, lower=True, check_finite=False), 0
    except LinAlgError:
        pass
    scale = max(1.0, float(np.abs(np.diag(A)).max())) if A.size else 1.0
    warnings.warn("precision not positive definite; adding ridge 1e-10*I", RidgeApplied, stacklevel=3)
    try:
        return cho_factor(A + RIDGE * scale * np.eye(A.shape[0]), lower=True, check_finite=False), 1
    except LinAlgError as exc:
        raise SingularPrecision("matrix is not positive definite even after ridging") from exc


def spd_solve(A, B):
    """Solve A X = B for symmetric positive-definite A.

    Returns ``(X, ridged)`` where ``ridged`` is 1 if the ridge fallback was
    needed.
    """
    cf, ridged = _factor(A)
    return cho_solve(cf, B, check_finite=False), ridged


def spd_inverse(A):
    X, ridged = spd_solve(A, np.eye(A.shape[0]))
    return 0.5 * (X + X.T), ridged


def spd_logdet(A):
    cf, _ = _factor(A)
    return 2.0 * np.log(np.diag(cf[0])).sum()


def right_solve(B, A):
    """B A^{-1} for symmetric positive-definite A."""
    X, ridged = spd_solve(A, B.T)
    return X.T, ridged
