"""
Monte Carlo estimation of the accepted-only QBER.

Work is split into fixed-size shards of blocks. Shard ``k`` draws from a
Philox stream keyed by (seed, stream, k), so results never depend on how
many worker processes run the shards.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from uwqkd.channel import sample_turbulence_batch
from uwqkd.detectors import Scheme
from uwqkd.errors import DomainError
from uwqkd.likelihoods import FadingGrid, get_tables
from uwqkd.receiver import (
    LinkParams,
    adaptive_z_max,
    pnr_pmf,
    sample_counts,
    sample_counts_at_energy,
    sample_homodyne,
)
from uwqkd.settings import Settings
from uwqkd.source import (
    SourceParams,
    acceptance_probability,
    accepted_radial_cdf,
    sample_accepted_batch,
)

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


class RealizationMode(str, Enum):
    BLOCK = "block"
    PER_SYMBOL = "per_symbol"


class TrialUnit(str, Enum):
    BITS = "bits"
    BLOCKS = "blocks"


@dataclass(frozen=True)
class McConfig:
    trials: int
    block_len: int = 4
    seed: int = 0
    schemes: Tuple[Scheme, ...] = (Scheme.HD, Scheme.QMLD, Scheme.QMSD)
    realization: RealizationMode = RealizationMode.BLOCK
    trial_unit: TrialUnit = TrialUnit.BITS
    stream: int = 0
    workers: int = 1
    shard_blocks: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(Scheme(s) for s in self.schemes))
        object.__setattr__(self, "realization", RealizationMode(self.realization))
        object.__setattr__(self, "trial_unit", TrialUnit(self.trial_unit))
        self.clean()

    def clean(self):
        max_block = Settings.get_qmsd_budget().max_block
        if int(self.trials) < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials!r}")
        if not 1 <= int(self.block_len) <= max_block:
            raise DomainError(f"block length must be 1..{max_block}, got {self.block_len!r}")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if int(self.workers) < 1:
            raise DomainError("workers must be >= 1")

    @property
    def n_blocks(self) -> int:
        if self.trial_unit is TrialUnit.BLOCKS:
            return int(self.trials)
        return int(math.ceil(self.trials / self.block_len))

    def shard_sizes(self) -> List[int]:
        size = self.shard_blocks or Settings.get_mc_defaults().shard_blocks
        full, rest = divmod(self.n_blocks, size)
        return [size] * full + ([rest] if rest else [])


@dataclass(frozen=True)
class QberEstimate:
    mean: float
    std_error: float
    n_bits: int
    n_blocks: int

    def as_json(self):
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_bits": self.n_bits,
            "n_blocks": self.n_blocks,
        }


@dataclass
class _Tally:
    errors: int = 0
    n_bits: int = 0
    n_blocks: int = 0
    fraction_sum: float = 0.0
    fraction_sq_sum: float = 0.0

    def add(self, wrong: np.ndarray):
        fractions = wrong.mean(axis=1)
        self.errors += int(wrong.sum())
        self.n_bits += int(wrong.size)
        self.n_blocks += int(wrong.shape[0])
        self.fraction_sum += math.fsum(fractions.tolist())
        self.fraction_sq_sum += math.fsum((fractions * fractions).tolist())

    def merge(self, other: "_Tally"):
        self.errors += other.errors
        self.n_bits += other.n_bits
        self.n_blocks += other.n_blocks
        self.fraction_sum += other.fraction_sum
        self.fraction_sq_sum += other.fraction_sq_sum

    def bitwise(self) -> QberEstimate:
        mean = self.errors / self.n_bits
        return QberEstimate(mean, math.sqrt(mean * (1.0 - mean) / self.n_bits), self.n_bits, self.n_blocks)

    def blockwise(self) -> QberEstimate:
        n = self.n_blocks
        mean = self.errors / self.n_bits
        if n > 1:
            variance = max(0.0, (self.fraction_sq_sum - n * mean * mean) / (n - 1))
        else:
            variance = 0.0
        return QberEstimate(mean, math.sqrt(variance / n), self.n_bits, n)


@dataclass(frozen=True)
class _Shard:
    config: McConfig
    link: LinkParams
    grid: Optional[FadingGrid]
    index: int
    n_blocks: int
    settings: Dict[str, Dict[str, Any]] = field(default_factory=dict)


def shard_generator(seed: int, stream: int, index: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(sequence))


def _run_shard(shard: _Shard) -> Dict[Scheme, _Tally]:
    if shard.settings:
        # worker processes start from the package defaults
        Settings.restore(shard.settings)
    config, link = shard.config, shard.link
    L = config.block_len
    n = shard.n_blocks * L
    rng = shard_generator(config.seed, config.stream, shard.index)

    model = link.channel.turbulence
    if config.realization is RealizationMode.BLOCK:
        fading = np.repeat(sample_turbulence_batch(model, shard.n_blocks, rng), L)
    else:
        fading = sample_turbulence_batch(model, n, rng)
    gamma, bits, _ = sample_accepted_batch(link.source, n, rng)
    counts = sample_counts(gamma, fading, link, rng)
    readings = sample_homodyne(gamma.real, fading, link, rng)

    tallies: Dict[Scheme, _Tally] = {}
    for scheme in config.schemes:
        if scheme is Scheme.HD:
            decided = (readings < 0).astype(np.int8)
        elif scheme is Scheme.QMLD:
            decided = shard.grid.qmld_decisions(int(counts.max()))[counts]
        else:
            decided = shard.grid.qmsd_decisions(counts.reshape(shard.n_blocks, L)).reshape(-1)
        tally = _Tally()
        tally.add((decided != bits).reshape(shard.n_blocks, L))
        tallies[scheme] = tally
    return tallies


def decision_grid(link: LinkParams) -> FadingGrid:
    """Fading grid used by the PNR decisions (matched Erlang for log-normal links)."""
    return FadingGrid(get_tables(link), turbulence=link.channel.turbulence.as_erlang())


def run_mc_qber(
    config: McConfig, link: LinkParams, grid: Optional[FadingGrid] = None
) -> Dict[Scheme, QberEstimate]:
    """Estimate the QBER of every requested scheme on shared random draws."""
    needs_grid = any(s is not Scheme.HD for s in config.schemes)
    if needs_grid and grid is None:
        grid = decision_grid(link)
    settings = Settings.snapshot()
    shards = [
        _Shard(config, link, grid if needs_grid else None, index, size, settings)
        for index, size in enumerate(config.shard_sizes())
    ]
    totals = {scheme: _Tally() for scheme in config.schemes}

    if config.workers > 1 and len(shards) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(_run_shard, shards))
    else:
        results = [_run_shard(shard) for shard in shards]

    for index, tallies in enumerate(results):
        for scheme, tally in tallies.items():
            totals[scheme].merge(tally)
        logger.debug("shard %d/%d merged", index + 1, len(shards))

    estimates = {}
    for scheme, tally in totals.items():
        estimates[scheme] = tally.blockwise() if scheme is Scheme.QMSD else tally.bitwise()
        logger.info(
            "MC %s: %.6g +- %.2g over %d bits",
            scheme.value,
            estimates[scheme].mean,
            estimates[scheme].std_error,
            tally.n_bits,
        )
    return estimates


@dataclass(frozen=True)
class PmfReport:
    n_samples: int
    tv_distance: float
    ks_statistic: float
    acceptance_rate: float
    acceptance_expected: float
    acceptance_sigma: float
    tv_threshold: float
    ks_threshold: float
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_json(self):
        return {
            "n_samples": self.n_samples,
            "tv_distance": self.tv_distance,
            "ks_statistic": self.ks_statistic,
            "acceptance_rate": self.acceptance_rate,
            "acceptance_expected": self.acceptance_expected,
            "acceptance_sigma": self.acceptance_sigma,
            "tv_threshold": self.tv_threshold,
            "ks_threshold": self.ks_threshold,
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def validate_pmf(
    S: float, N: float, source: SourceParams, n_samples: int, seed: int = 0
) -> PmfReport:
    """
    Compare the samplers with their exact laws: counts at energy S against the
    displaced thermal pmf, accepted |γ| against its radial law, and the
    empirical acceptance rate against P_acc.
    """
    if n_samples < 10_000:
        raise DomainError(f"n_samples must be >= 10000, got {n_samples!r}")
    defaults = Settings.get_mc_defaults()
    relax = defaults.relax_factor if n_samples < defaults.relax_below else 1.0
    count_rng, source_rng = (
        np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(2)
    )

    counts = sample_counts_at_energy(S, N, n_samples, count_rng)
    z_top = max(int(counts.max()), adaptive_z_max(S, N))
    empirical = np.bincount(counts, minlength=z_top + 1) / n_samples
    exact = pnr_pmf(np.arange(z_top + 1), S, N)
    tv = 0.5 * (np.abs(empirical - exact).sum() + max(0.0, 1.0 - exact.sum()))

    gamma, _, attempts = sample_accepted_batch(source, n_samples, source_rng)
    ks = float(stats.kstest(np.abs(gamma), lambda r: accepted_radial_cdf(r, source)).statistic)
    p_acc = acceptance_probability(source)
    rate = n_samples / attempts
    sigma = math.sqrt(p_acc * (1.0 - p_acc) / attempts)

    tv_threshold = defaults.tv_threshold * relax
    ks_threshold = defaults.ks_threshold * relax
    checks = {
        "counts": bool(tv < tv_threshold),
        "radial": bool(ks < ks_threshold),
        "acceptance": bool(abs(rate - p_acc) <= 3.0 * sigma + 1e-15),
    }
    report = PmfReport(
        n_samples=n_samples,
        tv_distance=float(tv),
        ks_statistic=ks,
        acceptance_rate=rate,
        acceptance_expected=p_acc,
        acceptance_sigma=sigma,
        tv_threshold=tv_threshold,
        ks_threshold=ks_threshold,
        checks=checks,
    )
    if not report.passed:
        logger.warning("sampler validation failed: %s", {k: v for k, v in checks.items() if not v})
    return report
