"""Reference detectors: class-conditional Mahalanobis distance scores
(per layer and ensemble-weighted across layers), the max-softmax baseline, and
the deterministic-trace restriction of the chain model that reduces to the
Mahalanobis ensemble up to an affine map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import LsgmModel, _validate_trace
from .errors import InvalidArgumentError
from .linalg import (
    SpdFactor,
    as_matrix,
    as_vector,
    cholesky,
    default_ridge,
    mahalanobis_sq,
    mahalanobis_sq_rows,
)
from .mixture import component_log_pdfs, log_weights


@dataclass(frozen=True)
class LayerClassStats:
    """Per-class means and one tied covariance factor for a single layer."""

    class_means: np.ndarray  # (num_classes, dim)
    shared_cov_factor: SpdFactor

    def __post_init__(self):
        m = as_matrix(self.class_means, "class_means")
        if m.shape[1] != self.shared_cov_factor.dim:
            raise InvalidArgumentError(
                f"class means have dim {m.shape[1]}, factor has "
                f"{self.shared_cov_factor.dim}"
            )


@dataclass(frozen=True)
class MahalanobisParams:
    """Fitted class statistics per layer plus the ensemble layer weights."""

    per_layer: tuple[LayerClassStats, ...]
    layer_weights: np.ndarray

    def __post_init__(self):
        w = as_vector(self.layer_weights, "layer_weights")
        if w.shape[0] != len(self.per_layer):
            raise InvalidArgumentError(
                f"{len(self.per_layer)} layers but {w.shape[0]} layer weights"
            )
        if not np.isfinite(w).all():
            raise InvalidArgumentError("layer weights must be finite")

    @property
    def num_layers(self) -> int:
        return len(self.per_layer)


def fit_mahalanobis(features_per_layer, labels) -> MahalanobisParams:
    """Class-conditional means with a tied covariance, independently per layer.

    The tied covariance pools the class-centered scatter over all samples
    (biased, divided by N) and is regularized like every other covariance in
    this package. Layer weights start uniform at 1/m.
    """
    mats = [as_matrix(f, f"features layer {i}") for i, f in enumerate(features_per_layer)]
    if not mats:
        raise InvalidArgumentError("need at least one layer")
    y = np.asarray(labels)
    n = mats[0].shape[0]
    if y.shape != (n,):
        raise InvalidArgumentError(f"labels shape {y.shape} != ({n},)")
    for i, mat in enumerate(mats):
        if mat.shape[0] != n:
            raise InvalidArgumentError(
                f"features layer {i} has {mat.shape[0]} rows, labels have {n}"
            )
    classes = np.unique(y)
    per_layer = []
    for mat in mats:
        d = mat.shape[1]
        means = np.empty((classes.shape[0], d))
        scatter = np.zeros((d, d))
        for j, c in enumerate(classes):
            rows = mat[y == c]
            if rows.shape[0] == 0:
                raise InvalidArgumentError(f"class {c!r} has no samples")
            means[j] = rows.mean(axis=0)
            centered = rows - means[j]
            scatter += centered.T @ centered
        pooled = scatter / n
        factor = cholesky(pooled, ridge=default_ridge(pooled))
        per_layer.append(LayerClassStats(means, factor))
    weights = np.full(len(mats), 1.0 / len(mats))
    return MahalanobisParams(tuple(per_layer), weights)


def mahalanobis_layer_score(params: MahalanobisParams, layer: int, x) -> float:
    """max over classes of the negated squared Mahalanobis distance."""
    if not 0 <= layer < params.num_layers:
        raise InvalidArgumentError(f"layer {layer} out of range")
    stats = params.per_layer[layer]
    v = as_vector(x, "x")
    if v.shape[0] != stats.shared_cov_factor.dim:
        raise InvalidArgumentError(
            f"x has dim {v.shape[0]}, layer expects {stats.shared_cov_factor.dim}"
        )
    best = -np.inf
    for mu in stats.class_means:
        best = max(best, -mahalanobis_sq(stats.shared_cov_factor, v, mu))
    return float(best)


def mahalanobis_layer_scores_batch(
    params: MahalanobisParams, layer: int, rows
) -> np.ndarray:
    """Per-row layer scores; same contract as mahalanobis_layer_score."""
    stats = params.per_layer[layer]
    x = as_matrix(rows, "rows")
    d2 = np.stack(
        [
            mahalanobis_sq_rows(stats.shared_cov_factor, x, mu)
            for mu in stats.class_means
        ]
    )
    return -d2.min(axis=0)


def mahalanobis_ensemble_score(params: MahalanobisParams, trace) -> float:
    """Layer-weight-weighted sum of the per-layer scores along a trace."""
    vectors = list(trace)
    if len(vectors) != params.num_layers:
        raise InvalidArgumentError(
            f"trace has {len(vectors)} layers, params have {params.num_layers}"
        )
    total = 0.0
    for i, v in enumerate(vectors):
        total += params.layer_weights[i] * mahalanobis_layer_score(params, i, v)
    return float(total)


def max_softmax_score(logits) -> float:
    """Largest softmax probability, computed against the shifted maximum."""
    v = as_vector(logits, "logits")
    if v.size == 0:
        raise InvalidArgumentError("logits must be non-empty")
    if not np.isfinite(v).all():
        raise InvalidArgumentError("logits must be finite")
    e = np.exp(v - v.max())
    return float(e.max() / e.sum())


def max_softmax_scores_batch(logits_rows) -> np.ndarray:
    x = as_matrix(logits_rows, "logits")
    if x.shape[1] == 0:
        raise InvalidArgumentError("logits must be non-empty")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e.max(axis=1) / e.sum(axis=1)


def lsgm_maha_restricted_score(model: LsgmModel, trace, layer_weights) -> float:
    """Deterministic-trace variant of the chain score: per layer, the MAP
    component's log-density weighted by the layer weight; no transition terms.
    """
    vectors = _validate_trace(model, trace)
    w = as_vector(layer_weights, "layer_weights")
    if w.shape[0] != model.num_layers:
        raise InvalidArgumentError(
            f"{w.shape[0]} layer weights for {model.num_layers} layers"
        )
    total = 0.0
    for i, (layer, x) in enumerate(zip(model.layers, vectors)):
        log_pdfs = component_log_pdfs(layer, x)
        z = int(np.argmax(log_pdfs + log_weights(layer)))
        total += w[i] * log_pdfs[z]
    return float(total)
