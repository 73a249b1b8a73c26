"""Dense numeric kernels: stable log-sums, Cholesky handling, Gaussian densities.

All public functions take and return float64 ndarrays. Covariances are only
ever touched through their Cholesky factor; nothing here materializes an
explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgumentError, NotPositiveDefiniteError

LN_2PI = float(np.log(2.0 * np.pi))

# Ridge defaults, relative to mean(diag(sigma)). The absolute fallback covers
# exactly-zero covariances (all samples identical).
DEFAULT_RIDGE_SCALE = 1e-6
RIDGE_CAP_SCALE = 1e-2
ABSOLUTE_RIDGE_FLOOR = 1e-6


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.isfinite(v).all():
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return v


def log_sum_exp(values) -> float:
    """ln(sum(exp(values))) computed against the running maximum.

    Entries may be -inf (they contribute nothing); an all(-inf) input yields
    -inf. NaN or +inf entries are rejected.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgumentError("log_sum_exp of an empty array")
    if np.isnan(v).any() or (v == np.inf).any():
        raise InvalidArgumentError("log_sum_exp input must be free of NaN/+inf")
    m = v.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.exp(v - m).sum()))


def log_sum_exp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log_sum_exp of a 2-D array; -inf rows stay -inf."""
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(m), out, -np.inf)


@dataclass(frozen=True)
class SpdFactor:
    """Cholesky factor of a symmetric positive-definite matrix.

    ``lower`` is the lower-triangular L with Sigma = L @ L.T, ``log_det`` is
    ln|Sigma| = 2 * sum(ln diag L), and ``ridge_used`` records the multiple of
    the identity that was added before factorization succeeded.
    """

    dim: int
    lower: np.ndarray
    log_det: float
    ridge_used: float = 0.0


def cholesky(sigma, ridge: float = 0.0) -> SpdFactor:
    """Factor sigma + ridge*I, escalating the ridge on failure.

    sigma must be square and symmetric within 1e-8 absolute. When the initial
    attempt fails, the ridge is escalated by factors of ten up to
    1e-2 * mean(diag(sigma)); if no attempt succeeds the matrix is reported as
    not positive definite.
    """
    s = as_matrix(sigma, "sigma")
    n, m = s.shape
    if n != m:
        raise InvalidArgumentError(f"sigma must be square, got {n}x{m}")
    if ridge < 0.0:
        raise InvalidArgumentError("ridge must be non-negative")
    if n > 0 and np.abs(s - s.T).max() > 1e-8:
        raise InvalidArgumentError("sigma is not symmetric within 1e-8")

    mean_diag = float(np.trace(s)) / n if n else 0.0
    cap = RIDGE_CAP_SCALE * mean_diag

    candidates = [ridge]
    if mean_diag > 0.0:
        r = max(ridge, 1e-8 * mean_diag)
        while r * 10.0 <= cap:
            r *= 10.0
            candidates.append(r)

    for r in candidates:
        try:
            lower = np.linalg.cholesky(s + r * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        log_det = 2.0 * float(np.log(np.diag(lower)).sum())
        return SpdFactor(dim=n, lower=lower, log_det=log_det, ridge_used=r)

    raise NotPositiveDefiniteError(
        f"matrix not positive definite after ridge escalation (cap {cap:g})"
    )


def default_ridge(sigma: np.ndarray) -> float:
    """Standard regularization for empirical covariances."""
    n = sigma.shape[0]
    mean_diag = float(np.trace(sigma)) / n if n else 0.0
    if mean_diag > 0.0:
        return DEFAULT_RIDGE_SCALE * mean_diag
    return ABSOLUTE_RIDGE_FLOOR


def mahalanobis_sq(factor: SpdFactor, x: np.ndarray, mu: np.ndarray) -> float:
    """(x-mu)^T Sigma^-1 (x-mu) via one triangular solve."""
    x = as_vector(x, "x")
    mu = as_vector(mu, "mu")
    if x.shape[0] != factor.dim or mu.shape[0] != factor.dim:
        raise InvalidArgumentError(
            f"dimension mismatch: x has {x.shape[0]}, mu has {mu.shape[0]}, "
            f"factor has {factor.dim}"
        )
    sol = solve_triangular(factor.lower, x - mu, lower=True, check_finite=False)
    return float(sol @ sol)


def mahalanobis_sq_rows(factor: SpdFactor, rows: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance of every row of ``rows`` to ``mu``."""
    if rows.shape[1] != factor.dim:
        raise InvalidArgumentError(
            f"dimension mismatch: rows have {rows.shape[1]}, factor has {factor.dim}"
        )
    sol = solve_triangular(factor.lower, (rows - mu).T, lower=True, check_finite=False)
    return np.einsum("dn,dn->n", sol, sol)


def gaussian_log_pdf(x, mu, factor: SpdFactor) -> float:
    """Log-density of N(mu, Sigma) at x, Sigma given by its Cholesky factor."""
    q = mahalanobis_sq(factor, x, mu)
    return -0.5 * (factor.dim * LN_2PI + factor.log_det + q)


def empirical_mean_cov(rows, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and biased covariance (normalized by the weight sum)."""
    x = as_matrix(rows, "rows")
    n, d = x.shape
    if n == 0:
        raise InvalidArgumentError("rows must be non-empty")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = as_vector(weights, "weights")
        if w.shape[0] != n:
            raise InvalidArgumentError(
                f"weights length {w.shape[0]} != number of rows {n}"
            )
        if (w < 0).any():
            raise InvalidArgumentError("weights must be non-negative")
        total = w.sum()
        if total <= 0.0:
            raise InvalidArgumentError("weights sum to zero")
        w = w / total
    mean = w @ x
    centered = x - mean
    cov = np.einsum("n,ni,nj->ij", w, centered, centered)
    return mean, cov
