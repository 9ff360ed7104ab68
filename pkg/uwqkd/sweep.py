"""
Parameter sweeps over an experiment configuration.

The sweep walks water x distance x m x turbulence x N. At every operating
point it fixes or optimizes the displacement, evaluates the analytic QBER of
each requested scheme and, when trials are requested, the Monte Carlo
estimate. Failures of a single point are recorded in its rows and the sweep
continues.
"""

import logging
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterator, List, Optional, Tuple

from uwqkd.channel import ChannelParams, TurbulenceModel
from uwqkd.config import ExperimentConfig
from uwqkd.detectors import (
    Scheme,
    hd_qber_analytic,
    optimize_displacement,
    qmld_qber_analytic,
    qmsd_qber_analytic,
)
from uwqkd.errors import DomainError, EnumerationBudgetError, NumericError, UnsupportedConfigurationError
from uwqkd.montecarlo import McConfig, run_mc_qber
from uwqkd.receiver import LinkParams, ReceiverParams
from uwqkd.source import SourceParams, acceptance_probability

logger = logging.getLogger(__name__)

RECOVERABLE = (NumericError, EnumerationBudgetError, UnsupportedConfigurationError, DomainError)


@dataclass(frozen=True)
class SweepRow:
    scheme: Scheme
    water: str
    d_m: float
    m: int
    theta: Optional[int]
    lambda_E: Optional[float]
    L: int
    N: float
    delta: Optional[float]
    p_acc: Optional[float]
    qber_analytic: Optional[float] = None
    qber_mc: Optional[float] = None
    qber_mc_stderr: Optional[float] = None
    note: str = ""

    def as_json(self):
        return {
            "scheme": self.scheme.value,
            "water": self.water,
            "d_m": self.d_m,
            "m": self.m,
            "theta": self.theta,
            "lambda": self.lambda_E,
            "L": self.L,
            "N": self.N,
            "delta": self.delta,
            "p_acc": self.p_acc,
            "qber_analytic": self.qber_analytic,
            "qber_mc": self.qber_mc,
            "qber_mc_stderr": self.qber_mc_stderr,
            "note": self.note,
        }


@dataclass
class SweepResult:
    name: str = "sweep"
    rows: List[SweepRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def failures(self) -> List[SweepRow]:
        return [row for row in self.rows if row.note]


@dataclass(frozen=True)
class OperatingPoint:
    water: str
    link: LinkParams

    @property
    def turbulence(self) -> TurbulenceModel:
        return self.link.channel.turbulence

    def row(self, scheme: Scheme, L: int, **values) -> SweepRow:
        model = self.turbulence
        return SweepRow(
            scheme=scheme,
            water=self.water,
            d_m=self.link.channel.distance_d,
            m=self.link.source.m,
            theta=model.theta if model.is_erlang else None,
            lambda_E=model.lambda_E if model.is_erlang else None,
            L=L,
            N=self.link.receiver.N,
            **values,
        )


def operating_points(config: ExperimentConfig) -> Iterator[OperatingPoint]:
    """Grid points in the fixed sweep order."""
    receiver = config.receiver
    z_max = None if receiver.z_max == "adaptive" else int(receiver.z_max)
    delta = receiver.delta if receiver.delta_mode == "fixed" else 0.0
    for (water, c), d, m, turbulence, N in product(
        config.channel.extinctions(),
        config.channel.distances,
        config.source.m,
        config.channel.turbulence,
        receiver.N,
    ):
        link = LinkParams(
            source=SourceParams(T=config.source.T, zeta=config.source.zeta, m=m),
            channel=ChannelParams(extinction_c=c, distance_d=d, turbulence=turbulence.model()),
            receiver=ReceiverParams(
                N=N,
                delta_mag=delta,
                delta_phase=receiver.delta_phase,
                sigma_H=receiver.sigma_H,
                z_max=z_max,
            ),
        )
        yield OperatingPoint(water, link)


def _erlang_link(link: LinkParams) -> LinkParams:
    """The link with its turbulence replaced by the moment-matched Erlang law."""
    if link.channel.turbulence.is_erlang:
        return link
    return replace(link, channel=replace(link.channel, turbulence=link.channel.turbulence.as_erlang()))


def _choose_delta(config: ExperimentConfig, link: LinkParams) -> Tuple[LinkParams, str]:
    if config.receiver.delta_mode == "fixed":
        return link, ""
    choice = optimize_displacement(_erlang_link(link), Scheme.QMLD)
    note = f"delta: search ended at its bound {choice.delta_mag:.4g}" if choice.at_bound else ""
    return link.with_delta(choice.delta_mag), note


def _analytic(scheme: Scheme, link: LinkParams, L: int) -> float:
    if scheme is Scheme.HD:
        method = "series" if link.channel.turbulence.is_erlang else "quadrature"
        return hd_qber_analytic(link, method=method).qber
    if not link.channel.turbulence.is_erlang:
        raise UnsupportedConfigurationError("analytic PNR QBER needs Erlang turbulence")
    if scheme is Scheme.QMLD:
        return qmld_qber_analytic(link).qber
    return qmsd_qber_analytic(link, L).qber


class _Sweep:
    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = threads
        self.result = SweepResult(name=config.name)
        self.schemes = list(dict.fromkeys(config.detection.schemes))

    def _jobs(self) -> List[Tuple[Scheme, int]]:
        jobs = [(s, 1) for s in self.schemes if s is not Scheme.QMSD]
        if Scheme.QMSD in self.schemes:
            jobs += [(Scheme.QMSD, L) for L in self.config.detection.L]
        return jobs

    def _monte_carlo(self, link: LinkParams, scheme: Scheme, L: int, stream: int):
        mc = self.config.mc
        estimate = run_mc_qber(
            McConfig(
                trials=mc.trials,
                block_len=L,
                seed=mc.seed,
                schemes=(scheme,),
                realization=mc.realization,
                trial_unit=mc.trial_unit,
                stream=stream,
                workers=self.threads,
            ),
            link,
        )[scheme]
        return estimate.mean, estimate.std_error

    def _point(self, point: OperatingPoint):
        jobs = self._jobs()
        try:
            link, delta_note = _choose_delta(self.config, point.link)
            p_acc = acceptance_probability(link.source)
        except RECOVERABLE as e:
            logger.warning("point %s d=%g failed: %s", point.water, point.link.channel.distance_d, e)
            for scheme, L in jobs:
                self.result.rows.append(point.row(scheme, L, delta=None, p_acc=None, note=str(e)))
            return

        for scheme, L in jobs:
            stream = len(self.result.rows)
            values = {"delta": None if scheme is Scheme.HD else link.receiver.delta_mag, "p_acc": p_acc}
            notes = [delta_note] if delta_note and scheme is not Scheme.HD else []
            try:
                values["qber_analytic"] = _analytic(scheme, link, L)
            except RECOVERABLE as e:
                logger.warning("analytic %s L=%d at d=%g skipped: %s", scheme.value, L, link.channel.distance_d, e)
                notes.append(f"analytic: {e}")
            if self.config.mc.trials > 0:
                try:
                    values["qber_mc"], values["qber_mc_stderr"] = self._monte_carlo(link, scheme, L, stream)
                except RECOVERABLE as e:
                    logger.warning("Monte Carlo %s L=%d at d=%g failed: %s", scheme.value, L, link.channel.distance_d, e)
                    notes.append(f"mc: {e}")
            self.result.rows.append(point.row(scheme, L, note="; ".join(notes), **values))

    def run(self) -> SweepResult:
        if not self.schemes:
            logger.info("no detection schemes requested; empty sweep")
            return self.result
        for point in operating_points(self.config):
            self._point(point)
        logger.info("sweep '%s': %d rows, %d with notes", self.result.name, len(self.result), len(self.result.failures()))
        return self.result


def run_sweep(config: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Rows of the configured sweep; identical for any ``threads``."""
    return _Sweep(config, threads).run()
