import numpy as np
import pytest

from lsgm.chain import (
    LsgmModel,
    TransitionMatrix,
    brute_force_log_prob,
    estimate_transitions,
    forward_log_prob,
    score_batch,
    transition_statistics,
)
from lsgm.errors import InvalidArgumentError, TooLargeError, ZeroRowError
from lsgm.linalg import cholesky, gaussian_log_pdf
from lsgm.mixture import LayerMixture, marginal_log_pdf


def random_mixture(rng, k, d):
    w = rng.dirichlet(np.ones(k))
    means = rng.normal(scale=2.0, size=(k, d))
    factors = []
    for _ in range(k):
        a = rng.normal(size=(d, d))
        factors.append(cholesky(a @ a.T + 0.3 * np.eye(d)))
    return LayerMixture(w, means, tuple(factors), "full")


def random_transition(rng, ka, kb):
    p = rng.dirichlet(np.ones(kb), size=ka)
    return TransitionMatrix(p)


def random_model(rng, sizes, dims):
    layers = tuple(random_mixture(rng, k, d) for k, d in zip(sizes, dims))
    transitions = tuple(
        random_transition(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)
    )
    names = tuple(f"layer{i}" for i in range(len(sizes)))
    return LsgmModel(layers, transitions, names)


def random_trace(rng, dims):
    return [rng.normal(scale=2.0, size=d) for d in dims]


class TestTransitionMatrix:
    def test_row_sum_enforced(self):
        with pytest.raises(InvalidArgumentError):
            TransitionMatrix(np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_negative_rejected(self):
        with pytest.raises(InvalidArgumentError):
            TransitionMatrix(np.array([[1.5, -0.5]]))


class TestModelValidation:
    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        layers = (random_mixture(rng, 2, 2), random_mixture(rng, 3, 2))
        bad = random_transition(rng, 2, 2)
        with pytest.raises(InvalidArgumentError):
            LsgmModel(layers, (bad,), ("a", "b"))

    def test_transition_count(self):
        rng = np.random.default_rng(0)
        layers = (random_mixture(rng, 2, 2),)
        t = random_transition(rng, 2, 2)
        with pytest.raises(InvalidArgumentError):
            LsgmModel(layers, (t,), ("a",))


class TestEstimateTransitions:
    def test_single_components_give_identity(self):
        rng = np.random.default_rng(1)
        layers = [random_mixture(rng, 1, 2), random_mixture(rng, 1, 2)]
        feats = [rng.normal(size=(10, 2)), rng.normal(size=(10, 2))]
        (t,) = estimate_transitions(layers, feats, smoothing=0.0)
        assert np.allclose(t.probs, [[1.0]])

    def test_hand_counted_hard_assignments(self):
        # Two far-apart components per layer; points are placed exactly on the
        # component means so the MAP assignments are known.
        means = np.array([[0.0, 0.0], [100.0, 0.0]])
        layer = LayerMixture(
            np.array([0.5, 0.5]), means, (cholesky(np.eye(2)),) * 2, "tied-full"
        )
        a = np.array([means[0], means[0], means[1], means[1]])
        b = np.array([means[0], means[0], means[1], means[1]])
        (t,) = estimate_transitions([layer, layer], [a, b], smoothing=0.0)
        assert np.allclose(t.probs, [[1.0, 0.0], [0.0, 1.0]])

    def test_additive_smoothing_hand_computed(self):
        means = np.array([[0.0, 0.0], [100.0, 0.0]])
        layer = LayerMixture(
            np.array([0.5, 0.5]), means, (cholesky(np.eye(2)),) * 2, "tied-full"
        )
        # Counts C = [[3, 1], [0, 0]]: all four samples start in cluster 0.
        a = np.array([means[0]] * 4)
        b = np.array([means[0], means[0], means[0], means[1]])
        (t,) = estimate_transitions([layer, layer], [a, b], smoothing=1.0)
        assert np.allclose(t.probs, [[4 / 6, 2 / 6], [1 / 2, 1 / 2]], atol=1e-12)
        assert t.smoothing == 1.0

    def test_zero_row_without_smoothing(self):
        means = np.array([[0.0, 0.0], [100.0, 0.0]])
        layer = LayerMixture(
            np.array([0.5, 0.5]), means, (cholesky(np.eye(2)),) * 2, "tied-full"
        )
        a = np.array([means[0]] * 3)
        b = np.array([means[0]] * 3)
        with pytest.raises(ZeroRowError, match="cluster 1"):
            estimate_transitions([layer, layer], [a, b], smoothing=0.0)

    def test_row_stochastic_for_any_smoothing(self):
        rng = np.random.default_rng(2)
        layers = [random_mixture(rng, 3, 2), random_mixture(rng, 4, 2)]
        feats = [rng.normal(scale=3.0, size=(50, 2)) for _ in range(2)]
        for smoothing in (1e-6, 0.5, 1.0, 10.0):
            for mode in ("hard", "soft"):
                (t,) = estimate_transitions(
                    layers, feats, assignment=mode, smoothing=smoothing
                )
                assert np.abs(t.probs.sum(axis=1) - 1.0).max() <= 1e-9
                assert (t.probs > 0).all()

    def test_huge_smoothing_approaches_uniform(self):
        rng = np.random.default_rng(3)
        layers = [random_mixture(rng, 3, 2), random_mixture(rng, 3, 2)]
        feats = [rng.normal(scale=3.0, size=(40, 2)) for _ in range(2)]
        (t,) = estimate_transitions(layers, feats, smoothing=1e6)
        assert np.abs(t.probs - 1.0 / 3.0).max() <= 1e-4

    def test_mismatched_rows_rejected(self):
        rng = np.random.default_rng(4)
        layers = [random_mixture(rng, 2, 2), random_mixture(rng, 2, 2)]
        with pytest.raises(InvalidArgumentError):
            estimate_transitions(
                layers, [rng.normal(size=(5, 2)), rng.normal(size=(6, 2))]
            )

    def test_soft_counts_use_responsibilities(self):
        rng = np.random.default_rng(5)
        layers = [random_mixture(rng, 2, 2), random_mixture(rng, 2, 2)]
        feats = [rng.normal(size=(30, 2)) for _ in range(2)]
        (hard_t,) = estimate_transitions(layers, feats, "hard", 1.0)
        (soft_t,) = estimate_transitions(layers, feats, "soft", 1.0)
        assert not np.allclose(hard_t.probs, soft_t.probs)


class TestForwardLogProb:
    def test_single_layer_collapses_to_marginal(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, [3], [2])
        x = rng.normal(size=2)
        assert forward_log_prob(model, [x]) == pytest.approx(
            marginal_log_pdf(model.layers[0], x), abs=1e-12
        )

    def test_two_singleton_layers_sum_densities(self):
        rng = np.random.default_rng(7)
        model = random_model(rng, [1, 1], [2, 3])
        trace = random_trace(rng, [2, 3])
        expected = gaussian_log_pdf(
            trace[0], model.layers[0].means[0], model.layers[0].cov_factors[0]
        ) + gaussian_log_pdf(
            trace[1], model.layers[1].means[0], model.layers[1].cov_factors[0]
        )
        assert forward_log_prob(model, trace) == pytest.approx(expected, abs=1e-10)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        model = random_model(rng, [2, 3, 2], [2, 3, 2])
        for _ in range(10):
            trace = random_trace(rng, [2, 3, 2])
            fast = forward_log_prob(model, trace)
            slow = brute_force_log_prob(model, trace)
            assert abs(fast - slow) <= 1e-9

    def test_deterministic_permutation_transitions(self):
        rng = np.random.default_rng(9)
        model = random_model(rng, [2, 2], [2, 2])
        perm = TransitionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        model = LsgmModel(model.layers, (perm,), model.layer_names)
        trace = random_trace(rng, [2, 2])
        # Only two survivor paths: (0 -> 1) and (1 -> 0).
        l0, l1 = model.layers
        paths = []
        for a, b in ((0, 1), (1, 0)):
            paths.append(
                np.log(l0.weights[a])
                + gaussian_log_pdf(trace[0], l0.means[a], l0.cov_factors[a])
                + gaussian_log_pdf(trace[1], l1.means[b], l1.cov_factors[b])
            )
        expected = np.logaddexp(paths[0], paths[1])
        assert brute_force_log_prob(model, trace) == pytest.approx(expected, abs=1e-10)
        assert forward_log_prob(model, trace) == pytest.approx(expected, abs=1e-10)

    def test_trace_dim_mismatch(self):
        rng = np.random.default_rng(10)
        model = random_model(rng, [2, 2], [2, 2])
        with pytest.raises(InvalidArgumentError):
            forward_log_prob(model, [np.zeros(2), np.zeros(3)])
        with pytest.raises(InvalidArgumentError):
            forward_log_prob(model, [np.zeros(2)])

    def test_finite_scores_with_positive_smoothing(self):
        rng = np.random.default_rng(11)
        layers = [random_mixture(rng, 2, 2), random_mixture(rng, 3, 2)]
        feats = [rng.normal(size=(30, 2)) for _ in range(2)]
        transitions = estimate_transitions(layers, feats, smoothing=1.0)
        model = LsgmModel(tuple(layers), tuple(transitions), ("a", "b"))
        for _ in range(20):
            trace = [rng.normal(scale=50.0, size=2) for _ in range(2)]
            assert np.isfinite(forward_log_prob(model, trace))


class TestBruteForce:
    def test_guard(self):
        rng = np.random.default_rng(12)
        # 4 layers of 40 components each = 2.56M paths.
        model = random_model(rng, [40, 40, 40, 40], [1, 1, 1, 1])
        trace = random_trace(rng, [1, 1, 1, 1])
        with pytest.raises(TooLargeError):
            brute_force_log_prob(model, trace)

    def test_single_layer_equals_marginal(self):
        rng = np.random.default_rng(13)
        model = random_model(rng, [4], [3])
        x = rng.normal(size=3)
        assert brute_force_log_prob(model, [x]) == pytest.approx(
            marginal_log_pdf(model.layers[0], x), abs=1e-12
        )


class TestScoreBatch:
    def test_empty(self):
        rng = np.random.default_rng(14)
        model = random_model(rng, [2, 2], [2, 2])
        assert score_batch(model, []).shape == (0,)

    def test_singleton(self):
        rng = np.random.default_rng(15)
        model = random_model(rng, [2, 2], [2, 2])
        trace = random_trace(rng, [2, 2])
        got = score_batch(model, [trace])
        assert got[0] == pytest.approx(forward_log_prob(model, trace), abs=1e-12)

    def test_order_preserved(self):
        rng = np.random.default_rng(16)
        model = random_model(rng, [3, 2], [2, 2])
        traces = [random_trace(rng, [2, 2]) for _ in range(25)]
        got = score_batch(model, traces)
        for i, t in enumerate(traces):
            assert got[i] == pytest.approx(forward_log_prob(model, t), abs=1e-10)

    def test_malformed_trace_names_index(self):
        rng = np.random.default_rng(17)
        model = random_model(rng, [2, 2], [2, 2])
        traces = [random_trace(rng, [2, 2]), [np.zeros(2), np.zeros(5)]]
        with pytest.raises(InvalidArgumentError, match="trace 1"):
            score_batch(model, traces)

    def test_in_distribution_scores_higher(self):
        rng = np.random.default_rng(18)
        model = random_model(rng, [2, 2], [3, 3])
        # In-dist traces sampled from the model itself; OOD far away.
        n = 200
        in_traces, ood_traces = [], []
        for _ in range(n):
            z0 = rng.choice(2, p=model.layers[0].weights)
            x0 = rng.multivariate_normal(
                model.layers[0].means[z0],
                model.layers[0].cov_factors[z0].lower
                @ model.layers[0].cov_factors[z0].lower.T,
            )
            z1 = rng.choice(2, p=model.transitions[0].probs[z0])
            x1 = rng.multivariate_normal(
                model.layers[1].means[z1],
                model.layers[1].cov_factors[z1].lower
                @ model.layers[1].cov_factors[z1].lower.T,
            )
            in_traces.append([x0, x1])
            ood_traces.append([x0 + 40.0, x1 - 40.0])
        assert score_batch(model, in_traces).mean() > score_batch(
            model, ood_traces
        ).mean()


class TestTransitionStatistics:
    def _fixture(self):
        means = np.array([[0.0, 0.0], [100.0, 0.0]])
        layer = LayerMixture(
            np.array([0.5, 0.5]), means, (cholesky(np.eye(2)),) * 2, "tied-full"
        )
        t = TransitionMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
        model = LsgmModel((layer, layer), (t,), ("a", "b"))
        return model, means

    def test_proportional_to_counts(self):
        model, means = self._fixture()
        a = np.array([means[0], means[0], means[1], means[1]])
        b = np.array([means[0], means[1], means[1], means[1]])
        stats = transition_statistics(model, [a, b], (0, 1))
        assert np.allclose(stats, [[0.25, 0.25], [0.0, 0.5]])
        assert stats.sum() == pytest.approx(1.0, abs=1e-12)

    def test_single_sample_point_mass(self):
        model, means = self._fixture()
        stats = transition_statistics(
            model, [means[1][None, :], means[0][None, :]], (0, 1)
        )
        assert stats[1, 0] == 1.0
        assert stats.sum() == 1.0

    def test_entropy_separates_spread_from_point_mass(self):
        model, means = self._fixture()
        rng = np.random.default_rng(19)
        spread_a = means[rng.integers(0, 2, size=100)] + rng.normal(size=(100, 2))
        spread_b = means[rng.integers(0, 2, size=100)] + rng.normal(size=(100, 2))
        point_a = np.tile(means[0], (100, 1)) + rng.normal(size=(100, 2))
        point_b = np.tile(means[1], (100, 1)) + rng.normal(size=(100, 2))

        def entropy(p):
            nz = p[p > 0]
            return float(-(nz * np.log(nz)).sum())

        spread = transition_statistics(model, [spread_a, spread_b], (0, 1))
        point = transition_statistics(model, [point_a, point_b], (0, 1))
        assert entropy(spread) > entropy(point)

    def test_non_adjacent_rejected(self):
        model, means = self._fixture()
        feats = [means[0][None, :], means[0][None, :]]
        with pytest.raises(InvalidArgumentError):
            transition_statistics(model, feats, (0, 0))
        with pytest.raises(InvalidArgumentError):
            transition_statistics(model, feats, (1, 2))


def test_oracle_equivalence_sweep():
    # Many small seed-fixed models; the exhaustive enumeration is the oracle.
    rng = np.random.default_rng(99)
    for _ in range(25):
        m = rng.integers(1, 4)
        sizes = list(rng.integers(1, 5, size=m))
        dims = list(rng.integers(1, 4, size=m))
        model = random_model(rng, sizes, dims)
        for _ in range(4):
            trace = random_trace(rng, dims)
            assert abs(
                forward_log_prob(model, trace) - brute_force_log_prob(model, trace)
            ) <= 1e-9
