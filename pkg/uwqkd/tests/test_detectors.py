import math
from unittest import TestCase

import numpy as np

from uwqkd.detectors import (
    DecisionRegions,
    QberResult,
    Scheme,
    hd_decide,
    hd_qber_analytic,
    hd_qber_quadrature,
    optimize_displacement,
    qbar_e,
    qmld_decide,
    qmld_qber_analytic,
    qmsd_decide,
    qmsd_qber_analytic,
)
from uwqkd.errors import DomainError, EnumerationBudgetError, UnsupportedConfigurationError
from uwqkd.likelihoods import get_fading_grid
from uwqkd.settings import DisplacementSearch, Settings
from uwqkd.tests.factories import make_link


def rel(a, b):
    return abs(a - b) / abs(b)


class TestQbarE(TestCase):
    def test_closed_matches_craig(self):
        """Test the terminating fading average against Craig's integral."""
        for V in (0.05, 0.4, 1.0, 3.0, 8.0):
            for theta, lam in ((1, 1.0), (3, 3.0), (10, 10.0), (4, 2.5)):
                closed = qbar_e(V, theta, lam)
                craig = qbar_e(V, theta, lam, method="craig")
                self.assertLess(rel(closed, craig), 1e-8, (V, theta, lam))

    def test_closed_matches_fading_average(self):
        for V in (0.3, 2.0):
            self.assertLess(rel(qbar_e(V, 3, 3.0), qbar_e(V, 3, 3.0, method="fading")), 1e-8)

    def test_limits(self):
        self.assertEqual(qbar_e(0.0, 3, 3.0), 0.5)
        self.assertEqual(qbar_e(math.inf, 3, 3.0), 0.0)
        self.assertLess(qbar_e(1e-4, 3, 3.0), 0.5)
        with self.assertRaises(DomainError):
            qbar_e(-1.0, 3, 3.0)
        with self.assertRaises(DomainError):
            qbar_e(1.0, 0, 3.0)
        with self.assertRaises(DomainError):
            qbar_e(1.0, 3, 3.0, method="bogus")

    def test_closed_matches_hypergeometric(self):
        """Test the terminating sum against the Gauss hypergeometric form."""
        for V in (0.05, 1.0, 8.0):
            for theta, lam in ((1, 1.0), (3, 3.0), (10, 10.0), (12, 12.0)):
                closed = qbar_e(V, theta, lam)
                gauss = qbar_e(V, theta, lam, method="hypergeometric")
                self.assertLess(rel(closed, gauss), 1e-8, (V, theta, lam))

    def test_vanishing_signal(self):
        """Test that a near-zero V stays finite and approaches one half."""
        for theta, lam in ((3, 3.0), (10, 10.0)):
            self.assertAlmostEqual(qbar_e(1e-12, theta, lam), 0.5, places=10)

    def test_decreasing_in_V(self):
        values = [qbar_e(V, 3, 3.0) for V in (0.1, 0.5, 1.0, 2.0, 4.0)]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))


class TestHomodyne(TestCase):
    def test_decision(self):
        self.assertEqual(hd_decide(0.0), 0)
        self.assertEqual(hd_decide(-0.1), 1)

    def test_series_matches_double_quadrature(self):
        for m, d in ((0, 10.0), (1, 20.0), (3, 30.0)):
            link = make_link(m=m, d=d)
            series = hd_qber_analytic(link).qber
            direct = hd_qber_quadrature(link).qber
            self.assertLess(rel(series, direct), 1e-6, (m, d))

    def test_quadrature_handles_lognormal(self):
        value = hd_qber_analytic(make_link(sigma_X=0.3, d=20.0), method="quadrature").qber
        self.assertGreater(value, 0.0)
        self.assertLess(value, 0.5)
        with self.assertRaises(UnsupportedConfigurationError):
            hd_qber_analytic(make_link(sigma_X=0.3, d=20.0))

    def test_finite_at_short_range(self):
        """Test the series HD QBER at short-range clear and coastal points."""
        for water, d in (("clear", 10.0), ("clear", 20.0), ("coastal", 10.0)):
            for m in (0, 3):
                value = hd_qber_analytic(make_link(water=water, d=d, m=m)).qber
                self.assertTrue(math.isfinite(value), (water, d, m))
                self.assertGreater(value, 0.0, (water, d, m))
                self.assertLess(value, 0.5, (water, d, m))

    def test_quadrature_at_short_range(self):
        """Test that the double quadrature converges at clear d = 10."""
        link = make_link(water="clear", d=10.0, m=1)
        self.assertLess(rel(hd_qber_analytic(link).qber, hd_qber_quadrature(link).qber), 1e-6)

    def test_increases_with_distance(self):
        values = [hd_qber_analytic(make_link(d=d)).qber for d in (5.0, 20.0, 40.0)]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))


class TestDecisionRegions(TestCase):
    def test_from_likelihoods(self):
        matrix = np.array([[0.6, 0.2], [0.3, 0.3], [0.1, 0.5]])
        regions = DecisionRegions.from_likelihoods(matrix)
        self.assertEqual(regions.Z0, (0, 1))
        self.assertEqual(regions.Z1, (2,))
        self.assertAlmostEqual(regions.qber(matrix), 0.5 * (0.1 + 0.2 + 0.3), places=15)

    def test_qmld_uses_region_form(self):
        """Test that the QMLD QBER equals half the summed pointwise minimum."""
        for d, delta in ((10.0, 0.9), (20.0, 0.9), (20.0, 1.5)):
            link = make_link(d=d, delta=delta)
            result = qmld_qber_analytic(link)
            matrix = get_fading_grid(link).likelihood_matrix(result.z_max)
            expected = 0.5 * math.fsum(np.minimum(matrix[:, 0], matrix[:, 1]).tolist())
            self.assertEqual(result.qber, min(expected, 0.5), (d, delta))

    def test_disjoint(self):
        with self.assertRaises(DomainError):
            DecisionRegions(Z0=(0, 1), Z1=(1,))

    def test_result_bounds(self):
        with self.assertRaises(DomainError):
            QberResult(scheme=Scheme.QMLD, qber=0.7)
        self.assertEqual(QberResult(scheme="HD", qber=0.7).scheme, Scheme.HD)


class TestPhotonCounting(TestCase):
    def setUp(self):
        self.link = make_link(d=20.0, m=1, N=0.001, delta=0.9)

    def test_zero_displacement_gives_half(self):
        link = make_link(d=20.0, delta=0.0)
        self.assertEqual(qmld_qber_analytic(link).qber, 0.5)
        result = qmsd_qber_analytic(link, 3)
        self.assertEqual(result.qber, 0.5)
        self.assertAlmostEqual(result.sequence_error, 1.0 - 1.0 / 8.0)

    def test_qmsd_single_symbol_equals_qmld(self):
        """Test QMSD with L = 1 against QMLD, results and decisions."""
        qmld = qmld_qber_analytic(self.link)
        qmsd = qmsd_qber_analytic(self.link, 1)
        self.assertLess(rel(qmsd.qber, qmld.qber), 1e-9)
        grid = get_fading_grid(self.link)
        for z in range(8):
            self.assertEqual(qmsd_decide((z,), grid), (qmld_decide(z, grid),))

    def test_qmld_normalization(self):
        result = qmld_qber_analytic(self.link)
        self.assertLess(result.tail_mass, 1e-8)
        self.assertEqual(result.warnings, ())
        self.assertIn("z_max", result.as_json())

    def test_ordering(self):
        """Test QMSD <= QMLD <= HD at one operating point."""
        hd = hd_qber_analytic(self.link).qber
        qmld = qmld_qber_analytic(self.link).qber
        qmsd = qmsd_qber_analytic(self.link, 3).qber
        self.assertLessEqual(qmsd, qmld + 1e-12)
        self.assertLessEqual(qmld, hd)

    def test_qmsd_sequence_error(self):
        result = qmsd_qber_analytic(self.link, 2)
        self.assertGreaterEqual(result.sequence_error, result.qber)
        self.assertLessEqual(result.sequence_error, 1.0)

    def test_qmsd_ties_to_zero(self):
        grid = get_fading_grid(make_link(d=20.0, delta=0.0))
        self.assertEqual(qmsd_decide((1, 0, 2), grid), (0, 0, 0))

    def test_qmsd_auto_matches_enumeration(self):
        """Test the factorized QMSD path against the full lattice at L = 2."""
        for d in (10.0, 20.0):
            link = make_link(d=d, delta=0.9)
            auto = qmsd_qber_analytic(link, 2)
            full = qmsd_qber_analytic(link, 2, method="enumerate")
            self.assertEqual(full.metadata["method"], "enumerated")
            self.assertIn(auto.metadata["method"], ("factorized", "enumerated"))
            self.assertLess(abs(auto.qber - full.qber), 1e-7, d)
            self.assertLess(abs(auto.sequence_error - full.sequence_error), 1e-7, d)
            if auto.metadata["method"] == "factorized":
                self.assertEqual(auto.qber, qmld_qber_analytic(link).qber)

    def test_qmsd_refuses_truncated_lattice(self):
        """Test that L = 4 at d = 10 never returns a silently truncated lattice."""
        link = make_link(d=10.0, delta=0.9)
        limit = Settings.get_receiver_defaults().tail_warning
        grid = get_fading_grid(link)
        self.assertGreater(grid.adaptive_z_max(tail=limit), 20)
        forced = qmsd_qber_analytic(link, 4, z_max=20)
        self.assertGreater(forced.tail_mass, limit)
        self.assertTrue(forced.warnings)
        try:
            result = qmsd_qber_analytic(link, 4)
        except EnumerationBudgetError:
            return
        self.assertEqual(result.metadata["method"], "factorized")
        self.assertLessEqual(result.tail_mass, limit)

    def test_qmsd_unknown_method(self):
        with self.assertRaises(DomainError):
            qmsd_qber_analytic(self.link, 2, method="bogus")

    def test_qmsd_budget(self):
        with self.assertRaises(EnumerationBudgetError):
            qmsd_qber_analytic(self.link, 5)
        with self.assertRaises(EnumerationBudgetError):
            qmsd_qber_analytic(self.link, 4, z_max=40)
        with self.assertRaises(DomainError):
            qmsd_decide((), get_fading_grid(self.link))


class TestDisplacement(TestCase):
    def test_optimum_beats_no_displacement(self):
        link = make_link(d=20.0, m=1)
        choice = optimize_displacement(link)
        self.assertFalse(choice.flat)
        self.assertGreater(choice.delta_mag, 0.0)
        self.assertLessEqual(choice.delta_mag, 3.0)
        self.assertFalse(choice.at_bound)
        self.assertLess(choice.qber, 0.5)
        shifted = qmld_qber_analytic(link.with_delta(choice.delta_mag)).qber
        self.assertAlmostEqual(shifted, choice.qber, places=12)
        for delta in (0.5 * choice.delta_mag, min(3.0, 1.5 * choice.delta_mag)):
            self.assertLessEqual(choice.qber, qmld_qber_analytic(link.with_delta(delta)).qber + 1e-12)

    def test_flat_objective(self):
        """Test that a link with no received signal keeps |δ| = 0."""
        link = make_link(water="harbor", d=100.0, m=1, N=0.001)
        with self.assertLogs("uwqkd.detectors", level="WARNING"):
            choice = optimize_displacement(link)
        self.assertTrue(choice.flat)
        self.assertEqual(choice.delta_mag, 0.0)

    def test_invalid(self):
        with self.assertRaises(DomainError):
            optimize_displacement(make_link(), Scheme.HD)
        with self.assertRaises(UnsupportedConfigurationError):
            optimize_displacement(make_link(delta_phase=0.5))

    def test_search_extends_past_default_range(self):
        """Test that a strong thermal background moves |δ| beyond the first scan."""
        link = make_link(d=20.0, m=1, N=1.0)
        search = DisplacementSearch(grid_points=6, upper=3.0, max_upper=6.0)
        choice = optimize_displacement(link, search=search)
        self.assertFalse(choice.flat)
        self.assertGreater(choice.delta_mag, 3.0)
        self.assertLessEqual(choice.delta_mag, 6.0)
        self.assertLess(choice.qber, qmld_qber_analytic(link.with_delta(3.0)).qber)
        if choice.at_bound:
            self.assertGreater(choice.delta_mag, 5.0)
