import json
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from valuation.datasets import AggregatedDataset, Coalition, OwnerDataset, Task, aggregate, make_blobs
from valuation.exceptions import (
    ConfigError, ConstantTarget, EmptyCoalition, TaskMismatch, UtilityError, UtilityTableMiss,
)
from valuation.semivalue import EvaluationLedger, Source
from valuation.utility import (
    UtilityFn, UtilityKind, evaluate, evaluate_all, r2_score, train_and_score,
)

from .factories import moons_owners, regression_owners


def linear_owners(n_owners=3, points=10, seed=0):
    rng = np.random.default_rng(seed)
    weights, bias = np.array([1.5, -2.0]), 0.7
    owners = []
    for owner_id in range(n_owners):
        features = rng.normal(size=(points, 2))
        owners.append(OwnerDataset(owner_id, features, features @ weights + bias, Task.REGRESSION))
    features = rng.normal(size=(20, 2))
    validation = AggregatedDataset(features, features @ weights + bias, Coalition.grand(n_owners), Task.REGRESSION)
    return owners, validation


class R2Tests(SimpleTestCase):

    def test_values(self):
        self.assertEqual(r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 1.0)
        self.assertEqual(r2_score([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]), 0.0)
        self.assertAlmostEqual(r2_score([1.0, 3.0], [3.0, 0.0]), 1.0 - 13.0 / 2.0)

    def test_constant_target(self):
        with self.assertRaises(ConstantTarget):
            r2_score([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_shape_mismatch(self):
        with self.assertRaises(UtilityError):
            r2_score([1.0, 2.0], [1.0, 2.0, 3.0])


class TrainerTests(SimpleTestCase):

    def test_one_neighbour_on_its_own_data(self):
        owners = moons_owners()
        validation = aggregate(owners, Coalition.grand(len(owners)))
        fn = UtilityFn(UtilityKind.KNN, validation, k=1)
        score = train_and_score(fn, Coalition.grand(len(owners)), owners)
        self.assertEqual(score.value, 1.0)
        self.assertFalse(score.degenerate)

    def test_ridge_recovers_linear_data(self):
        owners, validation = linear_owners()
        fn = UtilityFn(UtilityKind.RIDGE, validation, lam=0.0)
        self.assertAlmostEqual(train_and_score(fn, Coalition.of([0, 2]), owners).value, 1.0, delta=1e-9)

    def test_logistic_separates_blobs(self):
        centers = [[-5.0, 0.0], [5.0, 0.0]]
        owners = make_blobs(2, centers, 0.5, [[0], [1]], 20, seed=0)
        held_out = make_blobs(2, centers, 0.5, [[0], [1]], 10, seed=1)
        validation = aggregate(held_out, Coalition.grand(2))
        fn = UtilityFn(UtilityKind.LOGISTIC, validation, steps=500, lr=0.1)
        self.assertEqual(train_and_score(fn, Coalition.grand(2), owners).value, 1.0)

    def test_single_class_uses_majority_floor(self):
        owners = [
            OwnerDataset(0, [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]], [0, 0, 0]),
            OwnerDataset(1, [[3.0, 3.0], [3.1, 3.0]], [1, 1]),
        ]
        validation = AggregatedDataset(
            np.array([[0.0, 0.0], [3.0, 3.0], [0.2, 0.1], [2.9, 3.0]]), np.array([0, 1, 0, 1]),
            Coalition.grand(2), Task.CLASSIFICATION,
        )
        ledger = EvaluationLedger()
        for kind in (UtilityKind.KNN, UtilityKind.LOGISTIC):
            with self.subTest(kind=kind), self.assertLogs('valuation.utility', 'WARNING'):
                score = train_and_score(UtilityFn(kind, validation), Coalition.of([0]), owners)
                self.assertEqual(score.value, 0.5)
                self.assertTrue(score.degenerate)

        with self.assertLogs('valuation.utility', 'WARNING'):
            evaluate(UtilityFn(UtilityKind.KNN, validation), Coalition.of([1]), owners, ledger)
        self.assertTrue(ledger.get(Coalition.of([1])).degenerate)

    def test_task_mismatch(self):
        owners = moons_owners()
        validation = aggregate(owners, Coalition.grand(len(owners)))
        with self.assertRaises(TaskMismatch):
            train_and_score(UtilityFn(UtilityKind.KNN, validation), Coalition.of([0]), regression_owners())
        _, linear_validation = linear_owners()
        with self.assertRaises(TaskMismatch):
            train_and_score(UtilityFn(UtilityKind.RIDGE, linear_validation), Coalition.of([0]), owners)

    def test_empty_coalition(self):
        fn = UtilityFn.from_table({1: 0.5})
        with self.assertRaises(EmptyCoalition):
            train_and_score(fn, Coalition(0), [])
        with self.assertRaises(EmptyCoalition):
            evaluate(fn, Coalition(0), [])


class TableUtilityTests(SimpleTestCase):

    def test_lookup(self):
        fn = UtilityFn.from_table({'1': 0.25, 3: '0.75'})
        self.assertEqual(train_and_score(fn, Coalition.of([0]), []).value, 0.25)
        self.assertEqual(train_and_score(fn, Coalition.of([0, 1]), []).value, 0.75)

    def test_miss(self):
        fn = UtilityFn.from_table({1: 0.25})
        with self.assertRaises(UtilityTableMiss):
            train_and_score(fn, Coalition.of([1]), [])


class ParseTests(SimpleTestCase):

    def setUp(self):
        owners = moons_owners()
        self.validation = aggregate(owners, Coalition.grand(len(owners)))

    def test_trainers(self):
        knn = UtilityFn.parse('knn:3', self.validation)
        self.assertEqual((knn.kind, knn.k), (UtilityKind.KNN, 3))
        ridge = UtilityFn.parse('ridge:0.5', self.validation)
        self.assertEqual((ridge.kind, ridge.lam), (UtilityKind.RIDGE, 0.5))
        logistic = UtilityFn.parse('logistic:100:0.05', self.validation)
        self.assertEqual((logistic.steps, logistic.lr), (100, 0.05))
        self.assertEqual(logistic.describe(), 'logistic:100:0.05')
        self.assertEqual(UtilityFn.parse('logistic', self.validation).steps, 500)

    def test_table_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'table.json'
            path.write_text(json.dumps({'1': 0.1, '2': 0.2, '3': 0.4}))
            fn = UtilityFn.parse(f'table:{path}')
        self.assertEqual(fn.kind, UtilityKind.TABLE)
        self.assertEqual(fn.table, {1: 0.1, 2: 0.2, 3: 0.4})

    def test_errors(self):
        for text in ('svm:1', 'knn:many', 'knn:0', 'table:', 'table:/nonexistent/table.json'):
            with self.subTest(text=text), self.assertRaises(ConfigError):
                UtilityFn.parse(text, self.validation)
        with self.assertRaises(ConfigError):
            UtilityFn.parse('knn:3')


class EvaluationTests(SimpleTestCase):

    def test_memoized_in_ledger(self):
        owners = moons_owners()
        fn = UtilityFn(UtilityKind.KNN, aggregate(owners, Coalition.grand(len(owners))), k=3)
        ledger = EvaluationLedger()
        with mock.patch('valuation.utility.train_and_score', wraps=train_and_score) as trained:
            first = evaluate(fn, Coalition.of([0, 1]), owners, ledger)
            second = evaluate(fn, Coalition.of([0, 1]), owners, ledger)
        self.assertEqual(trained.call_count, 1)
        self.assertEqual(first, second)
        self.assertIs(ledger.get(Coalition.of([0, 1])).source, Source.ACTUAL)

    def test_actual_replaces_prediction(self):
        fn = UtilityFn.from_table({1: 0.25})
        ledger = EvaluationLedger()
        ledger.record_predicted(Coalition.of([0]), 0.9, 0.1)
        self.assertEqual(evaluate(fn, Coalition.of([0]), [], ledger), 0.25)
        self.assertIs(ledger.get(Coalition.of([0])).source, Source.ACTUAL)

    def test_evaluate_all_keeps_input_order(self):
        fn = UtilityFn.from_table({1: 0.1, 2: 0.2, 3: 0.3, 4: 0.4})
        ledger = EvaluationLedger()
        coalitions = [Coalition(3), Coalition(1), Coalition(4), Coalition(1)]
        utilities = evaluate_all(fn, coalitions, [], ledger)
        np.testing.assert_array_equal(utilities, [0.3, 0.1, 0.4, 0.1])
        self.assertEqual(ledger.coalitions(), [Coalition(3), Coalition(1), Coalition(4)])

    def test_evaluate_all_in_parallel(self):
        owners = moons_owners()
        fn = UtilityFn(UtilityKind.KNN, aggregate(owners, Coalition.grand(len(owners))), k=3)
        coalitions = [Coalition(mask) for mask in range(1, 16)]
        serial = evaluate_all(fn, coalitions, owners, EvaluationLedger())
        parallel_ledger = EvaluationLedger()
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = evaluate_all(fn, coalitions, owners, parallel_ledger, executor=pool)
        np.testing.assert_array_equal(serial, parallel)
        self.assertEqual(parallel_ledger.coalitions(), coalitions)

    def test_evaluate_all_rejects_empty(self):
        with self.assertRaises(EmptyCoalition):
            evaluate_all(UtilityFn.from_table({1: 0.1}), [Coalition(1), Coalition(0)], [], EvaluationLedger())
