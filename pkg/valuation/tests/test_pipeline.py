import json
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from valuation.config import RunConfig, load_run_config, validate_config
from valuation.datasets import Coalition
from valuation.exceptions import ConfigError, OwnerMismatch, PipelineError, UtilityTableMiss
from valuation.kernel import CoalitionDistances
from valuation.pipeline import (
    all_coalitions, compare_methods, compare_reports, load_report, partition,
    render_json, report_data, run_valuation, value_metrics, write_artifacts,
)
from valuation.semivalue import (
    EvaluationLedger, OwnerValue, SemivalueReport, SemivalueWeights,
    exact_semivalue_bruteforce, exact_shapley_bruteforce,
    sample_permutation_coalitions, shapley_permutation_estimate,
)

from .factories import additive_table, hamming_kernel, power_set, random_table, table_game


class TableGameMixin:

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()

    def write_table(self, table, name='table.json'):
        path = self.root / name
        path.write_text(json.dumps({str(mask): value for mask, value in table.items()}))
        return path

    def config(self, table, **overrides):
        values = {
            'n_owners': 6, 'points_per_owner': 4, 'utility': f"table:{self.write_table(table)}",
            'kernels': ['binary_rbf'], 'gammas': [0.5, 1.0], 'noise_vars': [1e-4, 1e-2],
        }
        values.update(overrides)
        return validate_config(values)


class ExactRunTests(TableGameMixin, SimpleTestCase):

    def test_everything_evaluated_is_brute_force(self):
        table = random_table(6, np.random.default_rng(0))
        run = run_valuation(self.config(table, actual_fraction=1.0))
        assert_allclose(run.report.means, exact_shapley_bruteforce(table_game(table), 6), atol=1e-10)
        self.assertEqual(run.report.n_actual, 63)
        self.assertEqual(run.report.n_predicted, 0)
        self.assertIsNone(run.report.kernel)
        self.assertTrue(all(value.std_gp == 0.0 for value in run.report.values))

    def test_banzhaf(self):
        table = random_table(4, np.random.default_rng(1))
        run = run_valuation(self.config(table, n_owners=4, actual_fraction=1.0, semivalue='banzhaf'))
        expected = exact_semivalue_bruteforce(table_game(table), SemivalueWeights.banzhaf(4))
        assert_allclose(run.report.means, expected, atol=1e-10)

    def test_hybrid_counts_and_provenance(self):
        table = random_table(6, np.random.default_rng(2))
        run = run_valuation(self.config(table, actual_fraction=0.5))
        self.assertEqual(run.report.n_actual, 32)
        self.assertEqual(run.report.n_predicted, 31)
        self.assertEqual(len(run.report.coalitions), 63)
        self.assertIn(Coalition.grand(6), run.ledger.coalitions())
        self.assertEqual(run.report.coalitions[0].source, 'actual')
        self.assertTrue(all(value.std_gp > 0 for value in run.report.values))
        self.assertEqual(run.report.kernel['family'], 'binary_rbf')

    def test_prior_sampled_game_is_within_three_sigma(self):
        coalitions = power_set(6)
        rng = np.random.default_rng(3)
        covariance = hamming_kernel(coalitions, coalitions, 0.5) + 1e-6 * np.eye(63)
        utilities = rng.multivariate_normal(np.zeros(63), covariance)
        table = {c.members: float(u) for c, u in zip(coalitions, utilities)}
        run = run_valuation(self.config(table, gammas=[0.5], noise_vars=[1e-6]))
        exact = exact_shapley_bruteforce(table_game(table), 6)
        within = [abs(value.mean - exact[value.owner]) <= 3 * value.std_gp for value in run.report.values]
        self.assertGreaterEqual(sum(within), 5)

    def test_active_selection_adds_evaluations(self):
        table = random_table(6, np.random.default_rng(4))
        run = run_valuation(self.config(table, actual_fraction=0.5, active_fraction=0.5))
        self.assertEqual(run.report.n_actual, 32 + 16)
        self.assertEqual(run.report.n_predicted, 15)

    def test_reproducible(self):
        table = random_table(5, np.random.default_rng(5))
        config = self.config(table, n_owners=5, actual_fraction=0.4, active_fraction=0.3)
        first = render_json(report_data(run_valuation(config).report))
        second = render_json(report_data(run_valuation(config).report))
        self.assertEqual(first, second)

    def test_uncertainty_curve(self):
        table = random_table(5, np.random.default_rng(6))
        run = run_valuation(self.config(table, n_owners=5, actual_fraction=0.5, checkpoints=3))
        evaluated = sorted({row['evaluated'] for row in run.curve})
        self.assertEqual(evaluated[0], 2)
        self.assertEqual(evaluated[-1], run.report.n_actual)
        self.assertEqual(len(run.curve), len(evaluated) * 5)
        self.assertTrue(all(row['lower'] <= row['mean'] <= row['upper'] for row in run.curve))

    def test_missing_table_entry_names_stage(self):
        table = random_table(3, np.random.default_rng(7))
        del table[0b101]
        with self.assertRaises(PipelineError) as raised:
            run_valuation(self.config(table, n_owners=3, actual_fraction=1.0))
        self.assertEqual(raised.exception.stage, 'evaluate')
        self.assertIsInstance(raised.exception.cause, UtilityTableMiss)


class PermutationRunTests(TableGameMixin, SimpleTestCase):

    def test_fully_evaluated_matches_estimate(self):
        table = random_table(6, np.random.default_rng(8))
        run = run_valuation(self.config(table, method='permutation', budget=20, actual_fraction=1.0, seed=4))
        sample = sample_permutation_coalitions(20, 6, seed=4)
        ledger = EvaluationLedger()
        for coalition in sample.coalitions:
            ledger.record_actual(coalition, table[coalition.members])
        estimate = shapley_permutation_estimate(sample.permutations, ledger, 6)
        assert_allclose(run.report.means, estimate.values, atol=1e-12)
        assert_allclose([value.std_mc for value in run.report.values], estimate.mc_std, atol=1e-12)

    def test_hybrid_covers_sampled_coalitions(self):
        table = random_table(6, np.random.default_rng(9))
        run = run_valuation(self.config(table, method='permutation', budget=24, actual_fraction=0.5, seed=1))
        sample = sample_permutation_coalitions(24, 6, seed=1)
        self.assertEqual(run.report.n_actual + run.report.n_predicted, len(sample.coalitions))
        self.assertTrue(all(value.std_mc is not None for value in run.report.values))

    def test_total_uncertainty_covers_error(self):
        covered = []
        for seed in range(10):
            values = np.random.default_rng(20 + seed).normal(size=8)
            run = run_valuation(self.config(
                additive_table(values), n_owners=8, method='permutation', budget=100, actual_fraction=0.5,
                seed=seed, gammas=[0.01, 0.03, 0.1, 0.3, 1.0], noise_vars=[1e-6, 1e-4, 1e-2],
            ))
            for value in run.report.values:
                error = (value.mean - values[value.owner]) ** 2
                covered.append(error <= (value.std_gp + value.std_mc) ** 2 + 1e-12)
        self.assertGreaterEqual(np.mean(covered), 0.8)


class SurrogateRunTests(SimpleTestCase):

    def test_default_configuration_on_moons(self):
        for seed in range(4):
            with self.subTest(seed=seed):
                run = run_valuation(validate_config({'seed': seed, 'projections': 30}))
                self.assertEqual(run.report.n_actual + run.report.n_predicted, 63)
                self.assertIn(run.report.kernel['family'], ('ssw_sq_exp', 'ssw_l1_exp'))
                self.assertTrue(all(np.isfinite(value.std_gp) and value.std_gp >= 0 for value in run.report.values))

    def test_projection_caches_are_frozen_before_fitting(self):
        prepare = CoalitionDistances.prepare
        config = validate_config({
            'n_owners': 4, 'points_per_owner': 10, 'utility': 'knn:3', 'gammas': [0.1, 1.0],
            'noise_vars': [1e-2], 'rhos': [1.0], 'etas': [0.3, 0.7], 'projections': 10,
        })
        with mock.patch.object(CoalitionDistances, 'prepare', autospec=True, side_effect=prepare) as prepared:
            run = run_valuation(config)
        distances, _, universe = prepared.call_args.args[:3]
        self.assertEqual(list(universe), list(all_coalitions(4)))
        self.assertEqual(len(distances.spaces), 2)
        for space in distances.spaces:
            self.assertTrue(space.cache.frozen)
            self.assertEqual(len(space.cache), 15)
        self.assertEqual(run.report.n_actual + run.report.n_predicted, 15)

    def test_knn_on_moons(self):
        config = validate_config({
            'n_owners': 4, 'points_per_owner': 10, 'utility': 'knn:3', 'kernels': ['ssw_sq_exp'],
            'gammas': [0.1, 1.0], 'noise_vars': [1e-2], 'rhos': [0.5], 'etas': [0.5], 'projections': 10,
        })
        run = run_valuation(config)
        self.assertEqual(run.report.n_actual + run.report.n_predicted, 15)
        self.assertEqual(run.report.owners, (0, 1, 2, 3))
        self.assertTrue(all(0.0 <= row.utility <= 1.0 for row in run.report.coalitions if row.source == 'actual'))


class PartitionTests(SimpleTestCase):

    def test_grand_always_evaluated(self):
        universe = all_coalitions(4)
        for seed in range(20):
            actual, predicted = partition(universe, 4, 0.1, np.random.default_rng(seed))
            self.assertEqual(actual[0], Coalition.grand(4))
            self.assertEqual(len(actual) + len(predicted), 15)
            self.assertFalse(set(actual) & set(predicted))

    def test_fraction_one(self):
        actual, predicted = partition(all_coalitions(3), 3, 1.0, np.random.default_rng(0))
        self.assertEqual(len(actual), 7)
        self.assertEqual(predicted, [])


class ArtifactTests(TableGameMixin, SimpleTestCase):

    def test_written_report_loads_back(self):
        table = random_table(4, np.random.default_rng(10))
        run = run_valuation(self.config(table, n_owners=4, actual_fraction=0.5))
        paths = write_artifacts(run, self.root / 'out')
        loaded = load_report(paths['report'])
        assert_allclose(loaded.means, run.report.means)
        self.assertEqual(loaded.n_predicted, run.report.n_predicted)
        self.assertEqual([row.coalition for row in loaded.coalitions], [row.coalition for row in run.report.coalitions])
        curve = pd.read_csv(paths['uncertainty'])
        self.assertEqual(list(curve.columns), ['evaluated', 'owner', 'mean', 'std', 'lower', 'upper'])

    def test_not_a_report(self):
        path = self.root / 'bad.json'
        path.write_text(json.dumps({'values': [{'owner': 0}]}))
        with self.assertRaises(ConfigError):
            load_report(path)


def report_of(means):
    return SemivalueReport(tuple(OwnerValue(i, m) for i, m in enumerate(means)), 'exact', 'shapley', 1, 0)


class MetricsTests(TableGameMixin, SimpleTestCase):

    def test_identical(self):
        metrics = value_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        self.assertEqual(metrics.mse, 0.0)
        self.assertAlmostEqual(metrics.pearson, 1.0)
        self.assertAlmostEqual(metrics.kendall_tau, 1.0)

    def test_reversed(self):
        self.assertAlmostEqual(value_metrics([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]).kendall_tau, -1.0)

    def test_one_swap(self):
        self.assertAlmostEqual(value_metrics([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]).kendall_tau, 1 / 3)

    def test_constant_values_have_no_correlation(self):
        metrics = value_metrics([1.0, 1.0], [0.0, 2.0])
        self.assertEqual(metrics.mse, 1.0)
        self.assertIsNone(metrics.pearson)

    def test_owner_mismatch(self):
        with self.assertRaises(OwnerMismatch):
            compare_reports(report_of([1.0, 2.0]), report_of([1.0, 2.0, 3.0]))

    def test_compare_methods(self):
        table = random_table(4, np.random.default_rng(11))
        reference = report_of(exact_shapley_bruteforce(table_game(table), 4))
        exact = self.config(table, n_owners=4, actual_fraction=1.0)
        hybrid = self.config(table, n_owners=4, actual_fraction=0.5)
        rows = compare_methods([exact, hybrid], reference, seeds=(0, 1))
        self.assertEqual([row.runs for row in rows], [2, 2])
        self.assertAlmostEqual(rows[0].mse_mean, 0.0, delta=1e-20)
        self.assertAlmostEqual(rows[0].pearson_mean, 1.0)
        self.assertNotEqual(rows[0].label, rows[1].label)


class RunConfigTests(TableGameMixin, SimpleTestCase):

    def test_file_then_overrides(self):
        path = self.root / 'run.json'
        path.write_text(json.dumps({'n_owners': 4, 'seed': 3, 'kernels': ['binary_rbf', 'ssw_l1_exp']}))
        config = load_run_config(path, {'seed': 5, 'utility': None})
        self.assertEqual(config.n_owners, 4)
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.utility, RunConfig().utility)
        self.assertEqual(config.kernels, ('binary_rbf', 'ssw_l1_exp'))

    def test_default_kernels_cover_both_orders(self):
        self.assertEqual(validate_config({}).kernels, ('ssw_sq_exp', 'ssw_l1_exp'))
        self.assertEqual(RunConfig().kernels, validate_config({}).kernels)

    def test_rejects_bad_fraction(self):
        with self.assertRaises(ConfigError):
            validate_config({'actual_fraction': 0.0})
        with self.assertRaises(ConfigError):
            validate_config({'active_fraction': 1.5})

    def test_permutation_needs_budget(self):
        with self.assertRaises(ConfigError):
            validate_config({'method': 'permutation'})
        with self.assertRaises(ConfigError):
            validate_config({'method': 'permutation', 'budget': 10, 'semivalue': 'banzhaf'})

    def test_blobs_need_centers(self):
        with self.assertRaises(ConfigError):
            validate_config({'dataset': 'blobs', 'n_owners': 2})

    def test_unknown_kernel(self):
        with self.assertRaises(ConfigError):
            validate_config({'kernels': ['poly']})

    def test_unreadable_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.root / 'missing.json')
