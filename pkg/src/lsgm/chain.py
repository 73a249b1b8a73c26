"""The sequential mixture chain: transition estimation between adjacent
layers' clusters, the linear-time forward recursion for the joint trace
log-probability, and the exhaustive enumeration used to verify it.

A trace is the per-layer sequence of feature vectors one input produces; all
probability arithmetic stays in log space end to end.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, TooLargeError, ZeroRowError
from .linalg import as_matrix, as_vector, log_sum_exp_rows
from .mixture import (
    LayerMixture,
    log_density_matrix,
    log_weights,
    responsibilities_matrix,
)

BRUTE_FORCE_LIMIT = 10**6

# Row-batching bound for the batched forward pass; caps the (rows, K)
# linear-space temporaries at ~64 MB.
_BATCH_CELLS = 8_000_000


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic cluster-transition probabilities between two layers."""

    probs: np.ndarray
    smoothing: float = 0.0

    def __post_init__(self):
        p = as_matrix(self.probs, "probs")
        if (p < 0).any():
            raise InvalidArgumentError("transition probabilities must be >= 0")
        rows = p.sum(axis=1)
        if np.abs(rows - 1.0).max() > 1e-9:
            raise InvalidArgumentError("every transition row must sum to 1")

    @property
    def from_k(self) -> int:
        return self.probs.shape[0]

    @property
    def to_k(self) -> int:
        return self.probs.shape[1]

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class LsgmModel:
    """Ordered per-layer mixtures joined by transition matrices."""

    layers: tuple[LayerMixture, ...]
    transitions: tuple[TransitionMatrix, ...]
    layer_names: tuple[str, ...]

    def __post_init__(self):
        m = len(self.layers)
        if m < 1:
            raise InvalidArgumentError("model needs at least one layer")
        if len(self.transitions) != m - 1:
            raise InvalidArgumentError(
                f"{m} layers require {m - 1} transitions, got {len(self.transitions)}"
            )
        if len(self.layer_names) != m:
            raise InvalidArgumentError("layer_names must match the layer count")
        for i, t in enumerate(self.transitions):
            if t.from_k != self.layers[i].num_components:
                raise InvalidArgumentError(
                    f"transition {i} has {t.from_k} source rows but layer {i} "
                    f"has {self.layers[i].num_components} components"
                )
            if t.to_k != self.layers[i + 1].num_components:
                raise InvalidArgumentError(
                    f"transition {i} has {t.to_k} target columns but layer "
                    f"{i + 1} has {self.layers[i + 1].num_components} components"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(layer.dim for layer in self.layers)


def _validate_trace(model: LsgmModel, trace, index: int | None = None) -> list[np.ndarray]:
    where = "" if index is None else f" (trace {index})"
    vectors = [as_vector(v, f"trace layer {i}{where}") for i, v in enumerate(trace)]
    if len(vectors) != model.num_layers:
        raise InvalidArgumentError(
            f"trace{where} has {len(vectors)} layers, model has {model.num_layers}"
        )
    for i, v in enumerate(vectors):
        if v.shape[0] != model.layers[i].dim:
            raise InvalidArgumentError(
                f"trace{where} layer {i} has dim {v.shape[0]}, "
                f"model expects {model.layers[i].dim}"
            )
    return vectors


def _validate_features_per_layer(model_layers, features_per_layer) -> list[np.ndarray]:
    if len(features_per_layer) != len(model_layers):
        raise InvalidArgumentError(
            f"got features for {len(features_per_layer)} layers, "
            f"model has {len(model_layers)}"
        )
    mats = [as_matrix(f, f"features layer {i}") for i, f in enumerate(features_per_layer)]
    n = mats[0].shape[0]
    for i, (mat, layer) in enumerate(zip(mats, model_layers)):
        if mat.shape[0] != n:
            raise InvalidArgumentError(
                f"features layer {i} has {mat.shape[0]} rows, layer 0 has {n}"
            )
        if mat.shape[1] != layer.dim:
            raise InvalidArgumentError(
                f"features layer {i} has dim {mat.shape[1]}, "
                f"mixture expects {layer.dim}"
            )
    return mats


def hard_assignments(layer: LayerMixture, features: np.ndarray) -> np.ndarray:
    """MAP component index per row; argmax ties break to the lowest index."""
    return responsibilities_matrix(layer, features).argmax(axis=1)


def estimate_transitions(
    model_layers,
    features_per_layer,
    assignment: str = "hard",
    smoothing: float = 1.0,
) -> list[TransitionMatrix]:
    """Count cluster transitions between adjacent layers and row-normalize.

    "hard" counts MAP assignments; "soft" accumulates outer products of the
    responsibility vectors. ``smoothing`` is added to every count before
    normalization. With zero smoothing, a source cluster that no sample visits
    makes its row undefined and raises ZeroRowError.
    """
    if assignment not in ("hard", "soft"):
        raise InvalidArgumentError(f"unknown assignment mode {assignment!r}")
    if smoothing < 0.0:
        raise InvalidArgumentError("smoothing must be >= 0")
    layers = tuple(model_layers)
    mats = _validate_features_per_layer(layers, features_per_layer)

    if assignment == "hard":
        assigns = [hard_assignments(layer, f) for layer, f in zip(layers, mats)]
    else:
        resps = [responsibilities_matrix(layer, f) for layer, f in zip(layers, mats)]

    out = []
    for i in range(len(layers) - 1):
        ka = layers[i].num_components
        kb = layers[i + 1].num_components
        counts = np.zeros((ka, kb))
        if assignment == "hard":
            np.add.at(counts, (assigns[i], assigns[i + 1]), 1.0)
        else:
            counts = resps[i].T @ resps[i + 1]
        if smoothing == 0.0:
            empty = np.flatnonzero(counts.sum(axis=1) == 0.0)
            if empty.size:
                raise ZeroRowError(
                    f"cluster {empty[0]} of layer {i} has no outgoing counts "
                    "and smoothing is 0"
                )
        smoothed = counts + smoothing
        out.append(
            TransitionMatrix(smoothed / smoothed.sum(axis=1, keepdims=True), smoothing)
        )
    return out


def forward_log_alpha(model: LsgmModel, features_per_layer) -> np.ndarray:
    """Batched forward recursion; returns the final (N, K_m) log-alpha table.

    Entry [n, b] is the log joint probability of sample n's observed prefix
    together with the last layer's cluster being b.
    """
    mats = _validate_features_per_layer(model.layers, features_per_layer)
    n = mats[0].shape[0]
    log_alpha = log_density_matrix(model.layers[0], mats[0]) + log_weights(
        model.layers[0]
    )
    for i, transition in enumerate(model.transitions):
        dens = log_density_matrix(model.layers[i + 1], mats[i + 1])
        mixed = np.empty((n, transition.to_k))
        step = max(1, _BATCH_CELLS // max(1, transition.from_k))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            # Shift each row to its maximum and mix in linear space; one
            # matrix product replaces the per-entry log-sum.
            shift = log_alpha[lo:hi].max(axis=1)
            safe = np.where(np.isfinite(shift), shift, 0.0)
            linear = np.exp(log_alpha[lo:hi] - safe[:, None]) @ transition.probs
            with np.errstate(divide="ignore"):
                chunk = safe[:, None] + np.log(linear)
            mixed[lo:hi] = np.where(
                np.isfinite(shift)[:, None], chunk, -np.inf
            )
        log_alpha = dens + mixed
    return log_alpha


def score_features(model: LsgmModel, features_per_layer) -> np.ndarray:
    """Log joint trace probability for every row of a per-layer feature stack."""
    return log_sum_exp_rows(forward_log_alpha(model, features_per_layer))


def forward_log_prob(model: LsgmModel, trace) -> float:
    """Log joint probability of one trace via the forward recursion."""
    vectors = _validate_trace(model, trace)
    stacks = [v[None, :] for v in vectors]
    return float(score_features(model, stacks)[0])


def brute_force_log_prob(model: LsgmModel, trace) -> float:
    """Exhaustive sum over every cluster path; the verification oracle.

    Each path contributes its first-layer weight, its transition
    probabilities, and every layer's component density. Guarded to at most
    10^6 paths.
    """
    vectors = _validate_trace(model, trace)
    sizes = [layer.num_components for layer in model.layers]
    total = 1
    for k in sizes:
        total *= k
    if total > BRUTE_FORCE_LIMIT:
        raise TooLargeError(f"{total} paths exceed the {BRUTE_FORCE_LIMIT} bound")

    dens = [
        log_density_matrix(layer, v[None, :])[0]
        for layer, v in zip(model.layers, vectors)
    ]
    lw0 = log_weights(model.layers[0])
    ltrans = [t.log_probs() for t in model.transitions]

    terms = np.empty(total)
    for idx, path in enumerate(itertools.product(*(range(k) for k in sizes))):
        term = lw0[path[0]] + dens[0][path[0]]
        for i in range(1, len(sizes)):
            term += ltrans[i - 1][path[i - 1], path[i]] + dens[i][path[i]]
        terms[idx] = term
    return float(log_sum_exp_rows(terms[None, :])[0])


def score_batch(model: LsgmModel, traces) -> np.ndarray:
    """Forward log-probability of every trace, in input order."""
    traces = list(traces)
    if not traces:
        return np.empty(0)
    validated = [_validate_trace(model, t, index=i) for i, t in enumerate(traces)]
    stacks = [
        np.stack([v[i] for v in validated]) for i in range(model.num_layers)
    ]
    return score_features(model, stacks)


def transition_statistics(
    model: LsgmModel, features_per_layer, layer_pair: tuple[int, int]
) -> np.ndarray:
    """Empirical transition-frequency matrix for one adjacent layer pair.

    Hard-assigns every sample at both layers and normalizes the count matrix
    so all entries sum to one; no smoothing is applied.
    """
    a, b = layer_pair
    if b != a + 1 or a < 0 or b >= model.num_layers:
        raise InvalidArgumentError(
            f"layer pair {layer_pair} is not an adjacent pair within the model"
        )
    mats = _validate_features_per_layer(model.layers, features_per_layer)
    ia = hard_assignments(model.layers[a], mats[a])
    ib = hard_assignments(model.layers[b], mats[b])
    counts = np.zeros(
        (model.layers[a].num_components, model.layers[b].num_components)
    )
    np.add.at(counts, (ia, ib), 1.0)
    total = counts.sum()
    if total == 0.0:
        raise InvalidArgumentError("no samples to tabulate")
    return counts / total
