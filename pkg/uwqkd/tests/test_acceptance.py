"""
Full-scale checks of the link model at 10⁶ samples. Run with ``pytest -m slow``.
"""

import io
import os
import tempfile
from contextlib import redirect_stdout
from pathlib import Path
from unittest import TestCase

import pytest
import yaml

from uwqkd.cli import VALIDATION_GRID, main
from uwqkd.detectors import (
    Scheme,
    hd_qber_analytic,
    optimize_displacement,
    qmld_qber_analytic,
    qmsd_qber_analytic,
)
from uwqkd.errors import EnumerationBudgetError
from uwqkd.montecarlo import McConfig, TrialUnit, run_mc_qber, validate_pmf
from uwqkd.source import SourceParams
from uwqkd.tests.factories import config_dict, make_link

WORKERS = os.cpu_count() or 1
FULL = 1_000_000


def optimized(**kwargs):
    link = make_link(**kwargs)
    return link.with_delta(optimize_displacement(link).delta_mag)


def analytic_qbers(link, L=4):
    """Analytic QBER per scheme; QMSD is None where the lattice would be truncated."""
    values = {
        Scheme.HD: hd_qber_analytic(link).qber,
        Scheme.QMLD: qmld_qber_analytic(link).qber,
    }
    try:
        values[Scheme.QMSD] = qmsd_qber_analytic(link, L).qber
    except EnumerationBudgetError:
        values[Scheme.QMSD] = None
    return values


def trend_qbers(link):
    # L = 2 keeps the QMSD lattice within budget at every trend point
    return analytic_qbers(link, L=2)


@pytest.mark.slow
class TestAnalyticAgreement(TestCase):
    def test_monte_carlo_within_three_standard_errors(self):
        """Test MC against analytic QBER for every scheme on the water x distance grid."""
        stream = 0
        for water in ("clear", "coastal"):
            for d in (10.0, 20.0, 30.0):
                link = optimized(water=water, d=d)
                analytic = analytic_qbers(link)
                # ordering holds at every grid point
                if analytic[Scheme.QMSD] is not None:
                    self.assertLessEqual(analytic[Scheme.QMSD], analytic[Scheme.QMLD] + 1e-12, (water, d))
                self.assertLessEqual(analytic[Scheme.QMLD], analytic[Scheme.HD], (water, d))
                estimates = run_mc_qber(McConfig(trials=FULL, block_len=4, seed=2024, stream=stream, workers=WORKERS), link)
                stream += 1
                for scheme, estimate in estimates.items():
                    if analytic[scheme] is None:
                        continue
                    self.assertLessEqual(
                        abs(estimate.mean - analytic[scheme]), 3 * estimate.std_error, (water, d, scheme)
                    )


@pytest.mark.slow
class TestTrends(TestCase):
    def test_subtraction_lowers_qber(self):
        values = [trend_qbers(optimized(m=m, d=20.0)) for m in range(4)]
        for scheme in Scheme:
            series = [v[scheme] for v in values]
            self.assertTrue(all(b < a for a, b in zip(series, series[1:])), (scheme, series))

    def test_weaker_turbulence_lowers_qber(self):
        strong = trend_qbers(optimized(d=20.0, theta=3, lambda_E=3.0))
        weak = trend_qbers(optimized(d=20.0, theta=10, lambda_E=10.0))
        for scheme in Scheme:
            self.assertLess(weak[scheme], strong[scheme], scheme)

    def test_clear_water_beats_coastal(self):
        clear = trend_qbers(optimized(water="clear", d=20.0))
        coastal = trend_qbers(optimized(water="coastal", d=20.0))
        for scheme in Scheme:
            self.assertLess(clear[scheme], coastal[scheme], scheme)

    def test_thermal_noise_raises_pnr_qber(self):
        quiet = trend_qbers(optimized(d=20.0, N=0.001))
        noisy = trend_qbers(optimized(d=20.0, N=1.0))
        for scheme in (Scheme.QMLD, Scheme.QMSD):
            self.assertGreater(noisy[scheme], quiet[scheme], scheme)

    def test_block_length_and_qmsd_qber(self):
        """Test MC QMSD over L = 4, 8, 12 at 10⁶ blocks against QMLD on the same draws."""
        link = optimized(d=20.0, m=3, theta=10, lambda_E=10.0)
        estimates = []
        for stream, L in enumerate((4, 8, 12)):
            config = McConfig(
                trials=FULL,
                block_len=L,
                seed=5,
                stream=stream,
                schemes=(Scheme.QMLD, Scheme.QMSD),
                trial_unit=TrialUnit.BLOCKS,
                workers=WORKERS,
            )
            result = run_mc_qber(config, link)
            qmsd = result[Scheme.QMSD]
            self.assertLessEqual(abs(qmsd.mean - result[Scheme.QMLD].mean), 3 * qmsd.std_error, L)
            estimates.append(qmsd)
        for a, b in zip(estimates, estimates[1:]):
            self.assertLessEqual(b.mean, a.mean + 3 * (a.std_error**2 + b.std_error**2) ** 0.5)


@pytest.mark.slow
class TestSamplerValidation(TestCase):
    def test_count_and_source_laws(self):
        for index, (S, N) in enumerate(VALIDATION_GRID):
            source = SourceParams(T=0.95, zeta=0.85, m=index % 4)
            report = validate_pmf(S, N, source, FULL, seed=index)
            self.assertTrue(report.passed, report.as_json())


@pytest.mark.slow
class TestDeterminism(TestCase):
    def test_sweep_identical_across_threads(self):
        """Test byte-identical sweep output for repeated runs and thread counts."""
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory)
            config = path / "det.yaml"
            data = config_dict(channel={"distances": [10.0, 20.0]}, mc={"trials": 60_000, "seed": 77})
            config.write_text(yaml.safe_dump(data), encoding="utf-8")
            outputs = []
            for run, threads in enumerate((1, 1, 4)):
                out = path / f"run{run}"
                with redirect_stdout(io.StringIO()):
                    code = main(["--verbosity", "WARNING", "sweep", str(config), "--threads", str(threads), "--out", str(out)])
                self.assertEqual(code, 0)
                outputs.append((out / "sweep.csv").read_bytes())
            self.assertEqual(outputs[0], outputs[1])
            self.assertEqual(outputs[0], outputs[2])
