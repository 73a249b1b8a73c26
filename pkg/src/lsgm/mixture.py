"""Per-layer density models: fixed-size Gaussian mixtures fit by EM and
truncated Dirichlet-process mixtures fit by mean-field variational inference.

Both fitters are deterministic given a seed. EM records the data
log-likelihood per iteration; the DP fitter records its variational objective
(ELBO). Either trace is restarted whenever a degenerate component is surgically
reseeded, so each recorded segment is monotone by construction of the
respective algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma, gammaln, xlogy

from .errors import InvalidArgumentError
from .linalg import (
    LN_2PI,
    SpdFactor,
    as_matrix,
    as_vector,
    cholesky,
    default_ridge,
    empirical_mean_cov,
    log_sum_exp_rows,
)

COVARIANCE_MODES = ("full", "diagonal", "tied-full")

DEGENERATE_WEIGHT = 1e-10
MAX_RESEEDS = 3


@dataclass(frozen=True)
class LayerMixture:
    """A fitted Gaussian mixture for one representation space.

    ``weights`` sum to one, ``means`` is (K, dim), and ``cov_factors`` holds
    one Cholesky factor per component (the same object may be shared in
    "tied-full" mode). Instances are immutable and safe to share.
    """

    weights: np.ndarray
    means: np.ndarray
    cov_factors: tuple[SpdFactor, ...]
    covariance_mode: str = "full"

    def __post_init__(self):
        w = as_vector(self.weights, "weights")
        m = as_matrix(self.means, "means")
        if self.covariance_mode not in COVARIANCE_MODES:
            raise InvalidArgumentError(
                f"unknown covariance_mode {self.covariance_mode!r}"
            )
        k = w.shape[0]
        if k == 0:
            raise InvalidArgumentError("mixture needs at least one component")
        if (w < 0).any():
            raise InvalidArgumentError("mixture weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"mixture weights sum to {w.sum()!r}, not 1")
        if m.shape[0] != k or len(self.cov_factors) != k:
            raise InvalidArgumentError(
                "weights, means and cov_factors must agree in length"
            )
        for f in self.cov_factors:
            if f.dim != m.shape[1]:
                raise InvalidArgumentError(
                    f"factor dim {f.dim} != mean dim {m.shape[1]}"
                )

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class FitDiagnostics:
    """Bookkeeping from one mixture fit.

    ``objective_trace`` holds the per-iteration data log-likelihood for EM and
    the ELBO for the variational fit; the trace restarts after any component
    surgery so each segment is monotone.
    """

    iterations: int
    objective_trace: np.ndarray
    converged: bool
    effective_components: int
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class DpConfig:
    """Settings for the truncated Dirichlet-process fit."""

    truncation: int
    concentration: float = 1.0
    prune_threshold: float = 1e-2

    def __post_init__(self):
        if self.truncation < 1:
            raise InvalidArgumentError("truncation must be >= 1")
        if self.concentration <= 0.0:
            raise InvalidArgumentError("concentration must be positive")
        if not 0.0 < self.prune_threshold < 1.0:
            raise InvalidArgumentError("prune_threshold must lie in (0, 1)")


def log_density_matrix(mixture: LayerMixture, rows) -> np.ndarray:
    """Component log-densities for every row: (N, K), no mixture weights."""
    x = as_matrix(rows, "rows")
    if x.shape[1] != mixture.dim:
        raise InvalidArgumentError(
            f"rows have dim {x.shape[1]}, mixture has dim {mixture.dim}"
        )
    n = x.shape[0]
    out = np.empty((n, mixture.num_components))
    diagonal = mixture.covariance_mode == "diagonal"
    for k, f in enumerate(mixture.cov_factors):
        diff = x - mixture.means[k]
        if diagonal:
            sol = diff / np.diag(f.lower)
            q = np.einsum("ni,ni->n", sol, sol)
        else:
            sol = solve_triangular(f.lower, diff.T, lower=True, check_finite=False)
            q = np.einsum("dn,dn->n", sol, sol)
        out[:, k] = -0.5 * (mixture.dim * LN_2PI + f.log_det + q)
    return out


def component_log_pdfs(mixture: LayerMixture, x) -> np.ndarray:
    """Per-component Gaussian log-density at a single point."""
    v = as_vector(x, "x")
    return log_density_matrix(mixture, v[None, :])[0]


def log_weights(mixture: LayerMixture) -> np.ndarray:
    """ln of the mixture weights; exact zeros map to -inf without warnings."""
    with np.errstate(divide="ignore"):
        return np.log(mixture.weights)


def marginal_log_pdf(mixture: LayerMixture, x) -> float:
    """ln sum_k weight_k * N(x | component k)."""
    lp = component_log_pdfs(mixture, x) + log_weights(mixture)
    return float(log_sum_exp_rows(lp[None, :])[0])


def responsibilities_matrix(mixture: LayerMixture, rows) -> np.ndarray:
    """Posterior component probabilities for every row: (N, K)."""
    lp = log_density_matrix(mixture, rows) + log_weights(mixture)
    return np.exp(lp - log_sum_exp_rows(lp)[:, None])


def responsibilities(mixture: LayerMixture, x) -> np.ndarray:
    v = as_vector(x, "x")
    return responsibilities_matrix(mixture, v[None, :])[0]


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns k rows of x as initial centers."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _fit_covariances(x, resp, nk, means, mode, ridge_floor):
    """M-step covariance factors for the requested mode."""
    k = means.shape[0]
    d = x.shape[1]
    if mode == "tied-full":
        pooled = np.zeros((d, d))
        for j in range(k):
            diff = x - means[j]
            pooled += np.einsum("n,ni,nj->ij", resp[:, j], diff, diff)
        pooled /= nk.sum()
        shared = cholesky(pooled, ridge=max(default_ridge(pooled), ridge_floor))
        return (shared,) * k
    factors = []
    for j in range(k):
        diff = x - means[j]
        cov = np.einsum("n,ni,nj->ij", resp[:, j], diff, diff) / nk[j]
        if mode == "diagonal":
            cov = np.diag(np.diag(cov))
        factors.append(cholesky(cov, ridge=max(default_ridge(cov), ridge_floor)))
    return tuple(factors)


def fit_gmm_em(
    features,
    k: int,
    seed: int,
    covariance_mode: str = "full",
    max_iter: int = 200,
    tol: float = 1e-6,
) -> tuple[LayerMixture, FitDiagnostics]:
    """Fit a k-component Gaussian mixture by EM with k-means++ initialization.

    Convergence is a relative log-likelihood change below ``tol``. A component
    whose weight collapses below 1e-10 is reseeded at the worst-fit sample up
    to three times and pruned afterwards; both events restart the recorded
    trace and are noted in the diagnostics.
    """
    x = as_matrix(features, "features")
    n, d = x.shape
    if covariance_mode not in COVARIANCE_MODES:
        raise InvalidArgumentError(f"unknown covariance_mode {covariance_mode!r}")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds the {n} available rows")

    rng = np.random.default_rng(seed)
    _, global_cov = empirical_mean_cov(x)
    ridge_floor = default_ridge(global_cov)
    global_factor = cholesky(global_cov, ridge=ridge_floor)

    weights = np.full(k, 1.0 / k)
    means = _kmeans_pp(x, k, rng)
    factors = (global_factor,) * k

    trace: list[float] = []
    warnings: list[str] = []
    reseeds = np.zeros(k, dtype=int)
    converged = False
    prev_ll = None
    iterations = 0

    while iterations < max_iter:
        iterations += 1
        mix = LayerMixture(weights, means, factors, covariance_mode)
        lp = log_density_matrix(mix, x) + log_weights(mix)
        lse = log_sum_exp_rows(lp)
        ll = float(lse.sum())
        resp = np.exp(lp - lse[:, None])
        nk = resp.sum(axis=0)

        starved = np.flatnonzero(nk / n < DEGENERATE_WEIGHT)
        if starved.size:
            keep = np.ones(k, dtype=bool)
            for j in starved:
                if reseeds[j] < MAX_RESEEDS:
                    reseeds[j] += 1
                    means = means.copy()
                    means[j] = x[int(np.argmin(lse))]
                    factors = tuple(
                        global_factor if i == j else f for i, f in enumerate(factors)
                    )
                    nk[j] = 1.0
                    warnings.append(f"component {j} reseeded ({reseeds[j]}/3)")
                else:
                    keep[j] = False
                    warnings.append(f"component {j} pruned after 3 reseeds")
            if not keep.all():
                means = means[keep]
                factors = tuple(f for f, kp in zip(factors, keep) if kp)
                reseeds = reseeds[keep]
                k = int(keep.sum())
                nk = nk[keep]
            weights = nk / nk.sum()
            trace = []
            prev_ll = None
            continue

        trace.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) <= tol * max(1.0, abs(prev_ll)):
            converged = True
            break
        prev_ll = ll

        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        factors = _fit_covariances(x, resp, nk, means, covariance_mode, ridge_floor)

    mixture = LayerMixture(weights, means, factors, covariance_mode)
    diagnostics = FitDiagnostics(
        iterations=iterations,
        objective_trace=np.asarray(trace),
        converged=converged,
        effective_components=int((weights > DEGENERATE_WEIGHT).sum()),
        warnings=warnings,
    )
    return mixture, diagnostics


def _log_wishart_norm(log_det_w: float, nu: float, d: int) -> float:
    """ln B(W, nu), the Wishart normalizer."""
    return float(
        -0.5 * nu * log_det_w
        - 0.5 * nu * d * np.log(2.0)
        - 0.25 * d * (d - 1) * np.log(np.pi)
        - gammaln(0.5 * (nu - np.arange(d))).sum()
    )


def fit_dpgmm(
    features,
    config: DpConfig,
    seed: int,
    max_iter: int = 500,
    tol: float = 1e-7,
) -> tuple[LayerMixture, FitDiagnostics]:
    """Fit a stick-breaking Dirichlet-process Gaussian mixture by mean-field
    coordinate ascent, truncated at ``config.truncation`` components.

    The component prior is Normal--Wishart with an empirical-Bayes base: the
    prior mean is the global data mean and the prior expected precision is the
    inverse of the (regularized) global covariance. After convergence,
    components with expected weight below ``config.prune_threshold`` are
    dropped and the surviving weights renormalized.
    """
    x = as_matrix(features, "features")
    n, d = x.shape
    t_max = config.truncation
    if t_max > n:
        raise InvalidArgumentError(f"truncation {t_max} exceeds the {n} rows")
    alpha = config.concentration
    rng = np.random.default_rng(seed)

    global_mean, global_cov = empirical_mean_cov(x)
    sigma_reg = global_cov + default_ridge(global_cov) * np.eye(d)

    m0 = global_mean
    beta0 = 1.0
    nu0 = float(d + 2)
    w0_inv = nu0 * sigma_reg  # so the prior expected precision is inv(sigma_reg)
    _, log_det_w0_inv = np.linalg.slogdet(w0_inv)
    ln_b0 = _log_wishart_norm(-log_det_w0_inv, nu0, d)

    # Soft assignment to k-means++ seeds; tiny seeded noise breaks exact
    # symmetry on degenerate data.
    centers = _kmeans_pp(x, t_max, rng)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    scale = max(float(np.trace(global_cov)) / d, 1e-12)
    logr = -0.5 * d2 / scale + 1e-3 * rng.standard_normal((n, t_max))
    r = np.exp(logr - log_sum_exp_rows(logr)[:, None])

    trace: list[float] = []
    warnings: list[str] = []
    if config.prune_threshold < 1.0 / t_max:
        warnings.append(
            f"prune_threshold {config.prune_threshold:g} is below 1/truncation; "
            "expect several surviving components"
        )
    converged = False
    iterations = 0
    prev_elbo = None
    eye = np.eye(d)

    while iterations < max_iter:
        iterations += 1

        # --- update q(v) and q(mu, Lambda) from the current responsibilities
        nk = r.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        xbar = (r.T @ x) / nk_safe[:, None]
        gamma1 = 1.0 + nk[:-1]
        gamma2 = alpha + np.cumsum(nk[::-1])[::-1][1:]

        beta = beta0 + nk
        m = (beta0 * m0 + nk[:, None] * xbar) / beta[:, None]
        nu = nu0 + nk

        w_list = []
        log_det_w = np.empty(t_max)
        w_chol = []
        for t in range(t_max):
            diff = x - xbar[t]
            s_t = np.einsum("n,ni,nj->ij", r[:, t], diff, diff) / nk_safe[t]
            dm = xbar[t] - m0
            w_inv = w0_inv + nk[t] * s_t + (beta0 * nk[t] / beta[t]) * np.outer(dm, dm)
            l_inv = np.linalg.cholesky(w_inv)
            w_t = solve_triangular(
                l_inv,
                solve_triangular(l_inv, eye, lower=True, check_finite=False),
                lower=True,
                trans="T",
                check_finite=False,
            )
            w_t = 0.5 * (w_t + w_t.T)
            w_list.append(w_t)
            log_det_w[t] = -2.0 * float(np.log(np.diag(l_inv)).sum())
            w_chol.append(np.linalg.cholesky(w_t))

        # --- expectations under the updated factors
        e_ln_v = digamma(gamma1) - digamma(gamma1 + gamma2)
        e_ln_1mv = digamma(gamma2) - digamma(gamma1 + gamma2)
        e_ln_pi = np.empty(t_max)
        cum = 0.0
        for t in range(t_max):
            e_ln_pi[t] = cum + (e_ln_v[t] if t < t_max - 1 else 0.0)
            if t < t_max - 1:
                cum += e_ln_1mv[t]
        e_ln_lam = np.array(
            [
                digamma(0.5 * (nu[t] - np.arange(d))).sum()
                + d * np.log(2.0)
                + log_det_w[t]
                for t in range(t_max)
            ]
        )

        # --- update q(z)
        quad = np.empty((n, t_max))
        for t in range(t_max):
            proj = (x - m[t]) @ w_chol[t]
            quad[:, t] = np.einsum("ni,ni->n", proj, proj)
        log_rho = (
            e_ln_pi
            + 0.5 * e_ln_lam
            - 0.5 * d / beta
            - 0.5 * nu * quad
            - 0.5 * d * LN_2PI
        )
        r = np.exp(log_rho - log_sum_exp_rows(log_rho)[:, None])
        nk = r.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        xbar = (r.T @ x) / nk_safe[:, None]

        # --- ELBO with everything current
        ep_x = 0.0
        ep_mulam = 0.0
        eq_mulam = 0.0
        for t in range(t_max):
            diff = x - xbar[t]
            s_t = np.einsum("n,ni,nj->ij", r[:, t], diff, diff) / nk_safe[t]
            dxm = xbar[t] - m[t]
            dm0 = m[t] - m0
            ep_x += 0.5 * nk[t] * (
                e_ln_lam[t]
                - d / beta[t]
                - nu[t] * float((s_t * w_list[t]).sum())
                - nu[t] * float(dxm @ w_list[t] @ dxm)
                - d * LN_2PI
            )
            ep_mulam += (
                0.5
                * (
                    d * np.log(beta0 / (2.0 * np.pi))
                    + e_ln_lam[t]
                    - d * beta0 / beta[t]
                    - beta0 * nu[t] * float(dm0 @ w_list[t] @ dm0)
                )
                + ln_b0
                + 0.5 * (nu0 - d - 1.0) * e_ln_lam[t]
                - 0.5 * nu[t] * float((w0_inv * w_list[t]).sum())
            )
            entropy_lam = (
                -_log_wishart_norm(log_det_w[t], nu[t], d)
                - 0.5 * (nu[t] - d - 1.0) * e_ln_lam[t]
                + 0.5 * nu[t] * d
            )
            eq_mulam += (
                0.5 * e_ln_lam[t]
                + 0.5 * d * np.log(beta[t] / (2.0 * np.pi))
                - 0.5 * d
                - entropy_lam
            )
        ep_z = float(nk @ e_ln_pi)
        ep_v = (t_max - 1) * np.log(alpha) + (alpha - 1.0) * float(e_ln_1mv.sum())
        eq_z = float(xlogy(r, r).sum())
        eq_v = float(
            (
                gammaln(gamma1 + gamma2)
                - gammaln(gamma1)
                - gammaln(gamma2)
                + (gamma1 - 1.0) * e_ln_v
                + (gamma2 - 1.0) * e_ln_1mv
            ).sum()
        )
        elbo = ep_x + ep_z + ep_v + ep_mulam - eq_z - eq_v - eq_mulam

        trace.append(elbo)
        if prev_elbo is not None and abs(elbo - prev_elbo) <= tol * max(
            1.0, abs(prev_elbo)
        ):
            converged = True
            break
        prev_elbo = elbo

    # Expected stick weights; the last stick takes the leftover mass.
    e_v = gamma1 / (gamma1 + gamma2)
    e_pi = np.empty(t_max)
    rest = 1.0
    for t in range(t_max - 1):
        e_pi[t] = e_v[t] * rest
        rest *= 1.0 - e_v[t]
    e_pi[-1] = rest

    keep = e_pi >= config.prune_threshold
    if not keep.any():
        keep[int(np.argmax(e_pi))] = True
        warnings.append("prune_threshold would remove every component; kept argmax")

    kept_weights = e_pi[keep]
    kept_weights = kept_weights / kept_weights.sum()
    kept_means = m[keep]
    factors = tuple(
        cholesky(_posterior_cov(w_list[t], nu[t])) for t in range(t_max) if keep[t]
    )
    mixture = LayerMixture(kept_weights, kept_means, factors, "full")
    diagnostics = FitDiagnostics(
        iterations=iterations,
        objective_trace=np.asarray(trace),
        converged=converged,
        effective_components=int(keep.sum()),
        warnings=warnings,
    )
    return mixture, diagnostics


def _posterior_cov(w: np.ndarray, nu: float) -> np.ndarray:
    """Point covariance from a Wishart posterior: inverse expected precision."""
    d = w.shape[0]
    e_lam = nu * w
    l = np.linalg.cholesky(e_lam)
    inv = solve_triangular(
        l,
        solve_triangular(l, np.eye(d), lower=True, check_finite=False),
        lower=True,
        trans="T",
        check_finite=False,
    )
    return 0.5 * (inv + inv.T)
