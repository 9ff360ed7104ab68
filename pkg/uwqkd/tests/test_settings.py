import math
from unittest import TestCase

from uwqkd.errors import ImproperlyConfigured
from uwqkd.likelihoods import get_fading_grid, get_tables
from uwqkd.settings import UWQKD, QuadratureSpec, Settings
from uwqkd.tests.factories import make_link


class TestSettings(TestCase):
    def setUp(self):
        Settings.reset()

    def tearDown(self):
        Settings.reset()

    def test_defaults(self):
        """Test the package defaults exposed as frozen dataclasses."""
        spec = Settings.get_quadrature_spec()
        self.assertEqual(spec.rel_tol, 1e-10)
        self.assertEqual(Settings.get_series_control().eps_series, 1e-12)
        self.assertAlmostEqual(Settings.get_receiver_defaults().sigma_h, math.sqrt(0.5))
        self.assertEqual(Settings.get_qmsd_budget().enumeration_max_block, 4)
        self.assertEqual(Settings.get_mc_defaults().figure_trials, 3000)

    def test_accessors_are_memoized(self):
        """Test that repeated access returns the cached instance."""
        self.assertIs(Settings.get_fading_rule(), Settings.get_fading_rule())

    def test_configure_overrides_and_clears_cache(self):
        """Test that configure replaces keys and drops the memoized view."""
        before = Settings.get_mc_defaults()
        Settings.configure(montecarlo={"shard_blocks": 100})
        after = Settings.get_mc_defaults()
        self.assertEqual(after.shard_blocks, 100)
        self.assertEqual(after.trials, before.trials)

    def test_configure_unknown_section(self):
        """Test that unknown sections are rejected."""
        with self.assertRaises(ImproperlyConfigured):
            Settings.configure(plotting={"dpi": 300})

    def test_malformed_section(self):
        """Test that unknown keys inside a section raise ImproperlyConfigured."""
        Settings.configure(series={"bogus": 1})
        with self.assertRaises(ImproperlyConfigured) as context:
            Settings.get_series_control()
        self.assertIn("series", str(context.exception))

    def test_missing_section(self):
        """Test that a removed section raises ImproperlyConfigured."""
        UWQKD.pop("qmsd")
        Settings.clear_cache()
        with self.assertRaises(ImproperlyConfigured) as context:
            Settings.get_qmsd_budget()
        self.assertIn("qmsd", str(context.exception))

    def test_get_setting_with_default(self):
        """Test getting a missing section with a default value."""
        default = {"test": True}
        self.assertEqual(Settings.get_setting("nonexistent", default), default)

    def test_invalid_values_rejected(self):
        """Test value validation of the dataclasses."""
        with self.assertRaises(ImproperlyConfigured):
            QuadratureSpec(rel_tol=0.0)
        Settings.configure(displacement={"grid_points": 2})
        with self.assertRaises(ImproperlyConfigured):
            Settings.get_displacement_search()

    def test_acceptable_error(self):
        """Test the tolerated error bound of flagged quadratures."""
        spec = QuadratureSpec(rel_tol=1e-10, abs_tol=1e-300)
        self.assertAlmostEqual(spec.acceptable_error(2.0), 2e-5)
        self.assertEqual(spec.acceptable_error(0.0), 1e-300)

    def test_acceptable_error_floor(self):
        """Test that an absolute floor widens the tolerated error."""
        spec = QuadratureSpec(rel_tol=1e-10, abs_tol=1e-300)
        self.assertEqual(spec.acceptable_error(0.0, floor=1e-12), 1e-12)
        self.assertAlmostEqual(spec.acceptable_error(2.0, floor=1e-12), 2e-5)

    def test_new_limits_validated(self):
        """Test the j-term cap and the displacement search ceiling."""
        Settings.configure(series={"j_max": 400, "j_cap": 200})
        with self.assertRaises(ImproperlyConfigured):
            Settings.get_series_control()
        Settings.configure(displacement={"upper": 3.0, "max_upper": 2.0})
        with self.assertRaises(ImproperlyConfigured):
            Settings.get_displacement_search()

    def test_configure_clears_likelihood_caches(self):
        """Test that overrides drop the memoized likelihood tables and grids."""
        link = make_link(d=10.0, delta=0.9)
        get_tables(link)
        get_fading_grid(link)
        self.assertGreater(get_tables.cache_info().currsize, 0)
        self.assertGreater(get_fading_grid.cache_info().currsize, 0)
        Settings.configure(fading={"tolerance": 1e-8})
        self.assertEqual(get_tables.cache_info().currsize, 0)
        self.assertEqual(get_fading_grid.cache_info().currsize, 0)

    def test_snapshot_and_restore(self):
        """Test that a snapshot carries overrides and restore reapplies them."""
        Settings.configure(montecarlo={"shard_blocks": 123})
        snapshot = Settings.snapshot()
        Settings.reset()
        self.assertNotEqual(Settings.get_mc_defaults().shard_blocks, 123)
        Settings.restore(snapshot)
        self.assertEqual(Settings.get_mc_defaults().shard_blocks, 123)
        snapshot["montecarlo"]["shard_blocks"] = 7
        self.assertEqual(UWQKD["montecarlo"]["shard_blocks"], 123)

    def test_restore_unchanged_keeps_caches(self):
        """Test that restoring an identical mapping leaves memoized views alone."""
        before = Settings.get_fading_rule()
        Settings.restore(Settings.snapshot())
        self.assertIs(Settings.get_fading_rule(), before)
