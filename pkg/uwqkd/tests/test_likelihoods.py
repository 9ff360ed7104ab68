import math
import pickle
from itertools import product
from unittest import TestCase

import numpy as np

from uwqkd.errors import (
    DomainError,
    EnumerationBudgetError,
    SeriesConvergenceError,
    UnsupportedConfigurationError,
)
from uwqkd.likelihoods import (
    FadingGrid,
    LikelihoodTables,
    QuadratureTables,
    angular_moment,
    cond_likelihood,
    csi_free_likelihood,
    get_fading_grid,
    get_tables,
    likelihood_matrix,
    qmsd_metric,
    radial_integral,
)
from uwqkd.receiver import pnr_pmf
from uwqkd.settings import Settings
from uwqkd.tests.factories import make_link


def rel(a, b):
    return abs(a - b) / abs(b)


class TestConditionalLikelihood(TestCase):
    def setUp(self):
        self.link = make_link(d=10.0, m=1, N=0.001, delta=0.8)

    def test_series_matches_quadrature(self):
        """Test the coefficient series against radial × angular quadrature."""
        for z, b, I_t in product((0, 1, 3), (0, 1), (0.3, 1.0, 2.5)):
            series = cond_likelihood(z, b, I_t, self.link)
            direct = cond_likelihood(z, b, I_t, self.link, method="quadrature")
            self.assertLess(rel(series, direct), 1e-6, (z, b, I_t))

    def test_series_matches_quadrature_thermal(self):
        link = make_link(d=15.0, m=2, N=0.5, delta=1.1)
        for z, b in product((0, 2, 5), (0, 1)):
            series = cond_likelihood(z, b, 0.8, link)
            direct = cond_likelihood(z, b, 0.8, link, method="quadrature")
            self.assertLess(rel(series, direct), 1e-6, (z, b))

    def test_normalized_over_counts(self):
        tables = get_tables(self.link)
        for b in (0, 1):
            total = sum(tables.conditional(z, b, 1.3) for z in range(60))
            self.assertAlmostEqual(total, 1.0, places=9)

    def test_zero_displacement_is_bit_symmetric(self):
        link = make_link(d=10.0, m=1, delta=0.0)
        for z in range(5):
            self.assertAlmostEqual(
                cond_likelihood(z, 0, 0.9, link), cond_likelihood(z, 1, 0.9, link), places=15
            )

    def test_no_signal_gives_thermal_law(self):
        """Test that I_t = 0 leaves the displaced thermal law of |δ|²."""
        link = make_link(d=10.0, m=1, N=0.2, delta=0.5)
        for z in range(4):
            self.assertLess(rel(cond_likelihood(z, 0, 0.0, link), pnr_pmf(z, 0.25, 0.2)), 1e-10)

    def test_coefficients_independent_of_path_loss(self):
        near = LikelihoodTables(make_link(d=5.0, delta=0.7))
        far = LikelihoodTables(make_link(d=35.0, delta=0.7))
        for z, b in product((0, 2, 4), (0, 1)):
            self.assertTrue(np.allclose(near.coefficients(z, b), far.coefficients(z, b), rtol=1e-13, atol=0))

    def test_exponents(self):
        tables = get_tables(self.link)
        s, tau = tables.exponents(2, 0)
        self.assertEqual(s[0], 0.0)
        self.assertTrue(np.allclose(tau - s, tables.m + 1))
        self.assertIn("chi", tables.constants())

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            cond_likelihood(-1, 0, 1.0, self.link)
        with self.assertRaises(DomainError):
            cond_likelihood(1, 2, 1.0, self.link)
        with self.assertRaises(DomainError):
            cond_likelihood(1, 0, -0.5, self.link)
        with self.assertRaises(DomainError):
            cond_likelihood(1, 0, 1.0, self.link, method="bogus")

    def test_rotated_displacement(self):
        """Test that a rotated δ is refused by the series and served by quadrature."""
        link = make_link(d=10.0, delta=0.8, delta_phase=0.3)
        with self.assertRaises(UnsupportedConfigurationError):
            LikelihoodTables(link)
        value = cond_likelihood(1, 0, 1.0, link, method="quadrature")
        self.assertGreater(value, 0.0)
        self.assertLess(value, 1.0)


class TestCsiFreeLikelihood(TestCase):
    def setUp(self):
        self.link = make_link(d=20.0, m=1, N=0.001, theta=3, lambda_E=3.0, delta=0.9)

    def test_semi_closed_matches_quadrature(self):
        for z, b in product((0, 1, 2, 4), (0, 1)):
            closed = csi_free_likelihood(z, b, self.link)
            direct = csi_free_likelihood(z, b, self.link, method="quadrature")
            self.assertLess(rel(closed, direct), 1e-6, (z, b))

    def test_fading_grid_matches_semi_closed(self):
        grid = get_fading_grid(self.link)
        for z in range(4):
            p0, p1 = grid.likelihood(z)
            self.assertLess(rel(p0, csi_free_likelihood(z, 0, self.link)), 1e-7, z)
            self.assertLess(rel(p1, csi_free_likelihood(z, 1, self.link)), 1e-7, z)

    def test_likelihood_matrix_normalization(self):
        grid = get_fading_grid(self.link)
        z_max = grid.adaptive_z_max()
        matrix = likelihood_matrix(grid, z_max)
        self.assertEqual(matrix.shape, (z_max + 1, 2))
        self.assertTrue(np.all(matrix.sum(axis=0) >= 1.0 - 1e-8))

    def test_fixed_z_max_respected(self):
        grid = FadingGrid(get_tables(make_link(d=20.0, delta=0.9, z_max=7)))
        self.assertEqual(grid.adaptive_z_max(), 7)

    def test_lognormal_refused(self):
        link = make_link(sigma_X=0.3, delta=0.9)
        with self.assertRaises(UnsupportedConfigurationError):
            csi_free_likelihood(1, 0, link)
        matched = FadingGrid(get_tables(link), turbulence=link.channel.turbulence.as_erlang())
        self.assertEqual(len(matched.likelihood(1)), 2)

    def test_radial_integral_depends_on_h_only(self):
        self.assertAlmostEqual(
            radial_integral(2, 1, 0, 1, self.link) / radial_integral(2, 0, 1, 0, self.link), 1.0, places=12
        )
        self.assertGreater(radial_integral(0, 0, 0, 0, self.link), 0.0)
        with self.assertRaises(DomainError):
            radial_integral(1, 2, 0, 0, self.link)


class TestAngularMoment(TestCase):
    def test_series_matches_quadrature(self):
        for n, eta, b in product((0, 1, 3), (-2.0, 0.0, 0.5, 3.0), (0, 1)):
            series = angular_moment(n, eta, b)
            direct = angular_moment(n, eta, b, method="quadrature")
            self.assertLess(abs(series - direct), 1e-10 * max(1.0, abs(direct)), (n, eta, b))

    def test_zero_argument(self):
        self.assertAlmostEqual(angular_moment(0, 0.0, 0), math.pi, places=13)
        self.assertAlmostEqual(angular_moment(1, 0.0, 1), -2.0, places=13)


class TestQmsdMetric(TestCase):
    def setUp(self):
        self.link = make_link(d=15.0, m=1, N=0.001, theta=3, lambda_E=3.0, delta=0.9)

    def test_tricomi_matches_quadrature(self):
        """Test the Tricomi form of the L = 2 block metric."""
        for z_vec, b_vec in [((1, 0), (0, 1)), ((2, 3), (1, 1)), ((0, 0), (0, 0)), ((4, 1), (1, 0))]:
            closed = qmsd_metric(z_vec, b_vec, self.link, method="tricomi")
            direct = qmsd_metric(z_vec, b_vec, self.link)
            self.assertLess(rel(closed, direct), 1e-6, (z_vec, b_vec))

    def test_single_symbol_equals_csi_free(self):
        for z, b in product((0, 2), (0, 1)):
            self.assertLess(rel(qmsd_metric((z,), (b,), self.link), csi_free_likelihood(z, b, self.link)), 1e-7)

    def test_grid_sequence_metrics(self):
        """Test the node-based metrics against the adaptive quadrature."""
        grid = get_fading_grid(self.link)
        z_vec = (1, 0, 2)
        metrics = grid.sequence_metrics(z_vec)
        self.assertEqual(metrics.shape, (8,))
        for index, bits in enumerate(product((0, 1), repeat=3)):
            self.assertLess(rel(metrics[index], qmsd_metric(z_vec, bits, self.link)), 1e-7, bits)

    def test_budget(self):
        with self.assertRaises(EnumerationBudgetError):
            qmsd_metric((1, 2, 3, 4, 5), (0, 0, 0, 0, 0), self.link, method="tricomi")
        with self.assertRaises(EnumerationBudgetError):
            qmsd_metric((9, 0), (0, 0), self.link, method="tricomi")
        with self.assertRaises(DomainError):
            qmsd_metric((1, 2), (0,), self.link)


class TestSeriesTruncation(TestCase):
    def tearDown(self):
        Settings.reset()

    def test_short_j_range_is_extended(self):
        """Test that a too small j_max is doubled until the series converges."""
        link = make_link(d=10.0, delta=2.5)
        reference = LikelihoodTables(link)
        Settings.configure(series={"j_max": 2})
        short = LikelihoodTables(link)
        for z, b in product((0, 3), (0, 1)):
            self.assertLess(rel(short.conditional(z, b, 0.7), reference.conditional(z, b, 0.7)), 1e-12, (z, b))

    def test_cap_reached(self):
        Settings.configure(series={"j_max": 2, "j_cap": 2})
        with self.assertRaises(SeriesConvergenceError):
            LikelihoodTables(make_link(d=10.0, delta=3.0)).conditional(0, 0, 1.0)


class TestQuadratureTables(TestCase):
    def test_grid_factors_match_series(self):
        """Test node factors from direct quadrature against the series tables."""
        link = make_link(d=15.0, delta=0.8)
        series = FadingGrid(LikelihoodTables(link), order=8)
        direct = FadingGrid(QuadratureTables(link), order=8)
        for z in (0, 2):
            self.assertTrue(
                np.allclose(direct.symbol_factors(z), series.symbol_factors(z), rtol=1e-6, atol=1e-12), z
            )


class TestSequenceDecisions(TestCase):
    def setUp(self):
        self.link = make_link(d=20.0, delta=0.9)
        self.grid = get_fading_grid(self.link)

    def test_matches_exhaustive_search(self):
        """Test the settled-symbol shortcut against the argmax over all sequences."""
        for z_vec in product(range(6), repeat=3):
            metrics = self.grid.sequence_metrics(z_vec)
            bits = self.grid.qmsd_decision(z_vec)
            index = int("".join(str(b) for b in bits), 2)
            self.assertGreaterEqual(metrics[index], metrics.max() * (1.0 - 1e-12), z_vec)

    def test_pointwise_bit_is_qmld_bit(self):
        decisions = self.grid.qmld_decisions(10)
        for z, bit in enumerate(self.grid.pointwise_decisions(10)):
            if bit >= 0:
                self.assertEqual(bit, decisions[z], z)

    def test_batch_matches_single_blocks(self):
        """Test the array form against per-block decisions."""
        rng = np.random.default_rng(3)
        blocks = rng.integers(0, 8, size=(200, 4))
        batch = self.grid.qmsd_decisions(blocks)
        self.assertEqual(batch.shape, (200, 4))
        for row, decided in zip(blocks, batch):
            self.assertEqual(tuple(int(b) for b in decided), self.grid.qmsd_decision(row))

    def test_decision_cache_bounded(self):
        """Test that the memoized sequence decisions respect the configured size."""
        self.assertEqual(self.grid._decide.cache_info().maxsize, Settings.get_qmsd_budget().decision_cache)

    def test_pickled_grid_decides(self):
        """Test that a grid shipped to a worker rebuilds its decision cache."""
        clone = pickle.loads(pickle.dumps(self.grid))
        self.assertEqual(clone.qmsd_decision((1, 0, 2)), self.grid.qmsd_decision((1, 0, 2)))
        self.assertEqual(clone._decide.cache_info().currsize, 1)
