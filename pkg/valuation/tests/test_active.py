import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from valuation.active import aggregate_weight, greedy_select, incremental_inverse
from valuation.datasets import Coalition
from valuation.exceptions import AlignmentError, BudgetExceedsPool, DegenerateSchur
from valuation.gp import condition
from valuation.kernel import CoalitionDistances, KernelFamily, KernelSpec, build_matrix
from valuation.semivalue import SemivalueWeights, weight_vector
from valuation.transport import Reduction, SWParams

from .factories import blob_owners, power_set


def spd(rng, size):
    factor = rng.normal(size=(size, size))
    return factor @ factor.T + size * np.eye(size)


class IncrementalInverseTests(SimpleTestCase):

    def test_diagonal(self):
        grown = incremental_inverse(np.array([[0.5]]), [0.0], 4.0)
        assert_allclose(grown, np.diag([0.5, 0.25]))

    def test_one_step(self):
        matrix = spd(np.random.default_rng(0), 7)
        grown = incremental_inverse(np.linalg.inv(matrix[:6, :6]), matrix[:6, 6], matrix[6, 6])
        assert_allclose(grown, np.linalg.inv(matrix), atol=1e-9)

    def test_growth_sequences(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            size = int(rng.integers(2, 21))
            matrix = spd(rng, size)
            inverse = np.array([[1.0 / matrix[0, 0]]])
            for k in range(1, size):
                inverse = incremental_inverse(inverse, matrix[:k, k], matrix[k, k])
            dense = np.linalg.inv(matrix)
            self.assertLessEqual(np.max(np.abs(inverse - dense)) / np.max(np.abs(dense)), 1e-9)

    def test_repeated_row_with_noise(self):
        base = np.array([[1.0, 0.3], [0.3, 1.0]])
        noise = 0.1
        matrix = np.array([[1.0, 0.3, 1.0], [0.3, 1.0, 0.3], [1.0, 0.3, 1.0]]) + noise * np.eye(3)
        grown = incremental_inverse(np.linalg.inv(base + noise * np.eye(2)), matrix[:2, 2], matrix[2, 2])
        assert_allclose(grown, np.linalg.inv(matrix), atol=1e-9)

    def test_degenerate(self):
        with self.assertRaises(DegenerateSchur) as raised:
            incremental_inverse(np.array([[1.0]]), [1.0], 1.0)
        self.assertEqual(raised.exception.schur, 0.0)


class AggregateWeightTests(SimpleTestCase):

    def test_single_owner(self):
        weights = SemivalueWeights.shapley(3)
        vector = weight_vector(weights, 0, [Coalition.of([0]), Coalition.of([0, 2])])
        assert_allclose(aggregate_weight([vector]), vector.weights)

    def test_root_sum_square(self):
        weights = SemivalueWeights.shapley(3)
        coalitions = power_set(3)
        vectors = [weight_vector(weights, owner, coalitions) for owner in range(3)]
        expected = [
            np.sqrt(sum(
                (weights.omega(c.size - 1) if owner in c else weights.omega(c.size)) ** 2 for owner in range(3)
            ))
            for c in coalitions
        ]
        assert_allclose(aggregate_weight(vectors), expected, atol=1e-15)

    def test_different_coalitions(self):
        weights = SemivalueWeights.shapley(2)
        with self.assertRaises(AlignmentError):
            aggregate_weight([weight_vector(weights, 0, [Coalition.of([0])]),
                              weight_vector(weights, 1, [Coalition.of([1])])])


class GreedySelectionTests(SimpleTestCase):

    def setUp(self):
        owners = blob_owners(n_owners=6, points=10, seed=3)
        self.sw = SWParams(n_projections=20, seed=3, reduction=Reduction.POOLED)
        self.distances = CoalitionDistances(owners, sw=self.sw)
        self.spec = KernelSpec(KernelFamily.SSW_SQ_EXP, gamma=0.5, sw=self.sw)
        self.weights = SemivalueWeights.shapley(6)

    def problem(self, seed, n_train=6, n_pool=12):
        rng = np.random.default_rng(seed)
        masks = rng.choice(np.arange(1, 64), size=n_train + n_pool, replace=False)
        coalitions = [Coalition(int(m)) for m in masks]
        train, pool = coalitions[:n_train], coalitions[n_train:]
        model = condition(self.spec, 1e-2, train, rng.normal(size=n_train), self.distances)
        w = aggregate_weight([weight_vector(self.weights, owner, pool) for owner in range(6)])
        return model, pool, w

    def dense_greedy(self, model, pool, w, budget):
        everything = list(model.coalitions) + list(pool)
        kernel = build_matrix(self.spec, everything, everything, self.distances).entries
        z = kernel[:, model.n_train:] @ w
        rows = list(range(model.n_train))
        chosen = []
        for _ in range(budget):
            best, best_value = None, -np.inf
            for j in range(len(pool)):
                g = model.n_train + j
                if g in rows:
                    continue
                selected = rows + [g]
                inverse = np.linalg.inv(kernel[np.ix_(selected, selected)] + model.effective_noise * np.eye(len(selected)))
                value = z[selected] @ inverse @ z[selected]
                if value > best_value:
                    best, best_value = g, value
            rows.append(best)
            chosen.append(pool[best - model.n_train])
        return chosen

    def test_matches_dense_greedy(self):
        for seed in range(5):
            model, pool, w = self.problem(seed)
            for budget in (1, 4):
                state = greedy_select(model, pool, w, budget, self.distances)
                self.assertEqual(state.chosen, self.dense_greedy(model, pool, w, budget))

    def test_incremental_equals_dense_updates(self):
        model, pool, w = self.problem(10)
        incremental = greedy_select(model, pool, w, 5, self.distances, incremental=True)
        dense = greedy_select(model, pool, w, 5, self.distances, incremental=False)
        self.assertEqual(incremental.chosen, dense.chosen)
        assert_allclose(incremental.objective_trace, dense.objective_trace, rtol=1e-9)

    def test_objective_never_decreases(self):
        model, pool, w = self.problem(11)
        trace = greedy_select(model, pool, w, 8, self.distances).objective_trace
        self.assertTrue(all(later >= earlier - 1e-9 * abs(earlier) for earlier, later in zip(trace, trace[1:])))

    def test_whole_pool(self):
        model, pool, w = self.problem(12)
        state = greedy_select(model, pool, w, len(pool), self.distances, refactor_every=3)
        self.assertEqual(sorted(state.chosen), sorted(pool))
        self.assertGreaterEqual(state.refactorizations, 4)

    def test_zero_budget(self):
        model, pool, w = self.problem(13)
        self.assertEqual(greedy_select(model, pool, w, 0, self.distances).chosen, [])

    def test_budget_exceeds_pool(self):
        model, pool, w = self.problem(14)
        with self.assertRaises(BudgetExceedsPool):
            greedy_select(model, pool, w, len(pool) + 1, self.distances)

    def test_duplicate_of_training_coalition_scores_lowest(self):
        spec = KernelSpec(KernelFamily.BINARY_RBF, gamma=1.0)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            masks = rng.choice(np.arange(1, 64), size=14, replace=False)
            train = [Coalition(int(m)) for m in masks[:6]]
            pool = [Coalition(int(m)) for m in masks[6:]] + [train[0]]
            model = condition(spec, 1e-8, train, rng.normal(size=6), self.distances)
            w = aggregate_weight([weight_vector(self.weights, owner, pool) for owner in range(6)])

            scores = greedy_select(model, pool, w, 1, self.distances).scores[0]
            self.assertEqual(len(scores), len(pool))
            self.assertEqual(min(scores, key=scores.get), train[0])
