"""
Displaced photon-number-resolving receiver.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special, stats

from uwqkd.channel import ChannelParams
from uwqkd.errors import DomainError
from uwqkd.settings import Settings
from uwqkd.source import SourceParams

logger = logging.getLogger(__name__)

_ROW_CHUNK = 64


@dataclass(frozen=True)
class ReceiverParams:
    N: float
    delta_mag: float = 0.0
    delta_phase: float = 0.0
    sigma_H: Optional[float] = None
    z_max: Optional[int] = None

    def __post_init__(self):
        if self.sigma_H is None:
            object.__setattr__(self, "sigma_H", Settings.get_receiver_defaults().sigma_h)
        self.clean()

    def clean(self):
        if not self.N >= 0 or not math.isfinite(self.N):
            raise DomainError(f"thermal photon number N must be >= 0, got {self.N!r}")
        if not self.delta_mag >= 0 or not math.isfinite(self.delta_mag):
            raise DomainError(f"|delta| must be >= 0, got {self.delta_mag!r}")
        if not math.isfinite(self.delta_phase):
            raise DomainError("delta_phase must be finite")
        if not self.sigma_H > 0:
            raise DomainError(f"sigma_H must be positive, got {self.sigma_H!r}")
        if self.z_max is not None and int(self.z_max) < 1:
            raise DomainError(f"z_max must be >= 1, got {self.z_max!r}")

    @property
    def delta(self) -> complex:
        return cmath.rect(self.delta_mag, self.delta_phase)

    def as_json(self):
        return {
            "N": self.N,
            "delta_mag": self.delta_mag,
            "delta_phase": self.delta_phase,
            "sigma_H": self.sigma_H,
            "z_max": self.z_max,
        }


@dataclass(frozen=True)
class LinkParams:
    """Source, channel and receiver of one operating point."""

    source: SourceParams
    channel: ChannelParams
    receiver: ReceiverParams
    amplitude: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "amplitude", math.sqrt(self.channel.I_p) * self.source.mu)

    def with_delta(self, delta_mag: float) -> "LinkParams":
        return replace(self, receiver=replace(self.receiver, delta_mag=float(delta_mag)))

    def with_receiver(self, **changes) -> "LinkParams":
        return replace(self, receiver=replace(self.receiver, **changes))

    def as_json(self):
        return {
            "source": self.source.as_json(),
            "channel": self.channel.as_json(),
            "receiver": self.receiver.as_json(),
        }


def received_amplitude(gamma, I_t, link: LinkParams):
    """α_or = √(I_p I_t)·μ·γ."""
    return link.amplitude * np.sqrt(I_t) * gamma


def displaced_amplitude(gamma, I_t, link: LinkParams):
    """α_ord = α_or − δ."""
    return received_amplitude(gamma, I_t, link) - link.receiver.delta


def displaced_energy(gamma, I_t, link: LinkParams):
    """S_δ = |√(I_p I_t)·μ·γ − δ|²."""
    if np.any(np.asarray(I_t) < 0):
        raise DomainError("I_t must be non-negative")
    value = np.abs(displaced_amplitude(gamma, I_t, link)) ** 2
    return float(value) if np.ndim(value) == 0 else value


def _log_pmf_rows(z: np.ndarray, S: float, N: float) -> np.ndarray:
    """ln Pr(z) of the displaced thermal law from the binomial Laguerre sum."""
    zz = z[:, None].astype(float)
    k = np.arange(int(z.max()) + 1, dtype=float)[None, :]
    inside = k <= zz
    rest = np.where(inside, zz - k, 0.0)
    terms = (
        special.gammaln(zz + 1)
        - 2.0 * special.gammaln(k + 1)
        - special.gammaln(rest + 1)
        + special.xlogy(rest, N)
        + special.xlogy(k, S)
        - (zz + 1 + k) * math.log1p(N)
    )
    terms = np.where(inside, terms, -np.inf)
    return special.logsumexp(terms, axis=1) - S / (N + 1.0)


def _check_law(S: float, N: float):
    if not S >= 0 or not math.isfinite(S):
        raise DomainError(f"energy S must be >= 0, got {S!r}")
    if not N >= 0 or not math.isfinite(N):
        raise DomainError(f"thermal photon number N must be >= 0, got {N!r}")


def pnr_pmf(z, S: float, N: float, n_floor: Optional[float] = None):
    """Displaced thermal count law Pr(z | S, N); Poisson below ``n_floor``."""
    _check_law(S, N)
    z_arr = np.asarray(z)
    if np.any(z_arr < 0) or np.any(z_arr != np.floor(z_arr)):
        raise DomainError("counts must be non-negative integers")
    if n_floor is None:
        n_floor = Settings.get_receiver_defaults().n_floor
    if N <= n_floor:
        value = stats.poisson.pmf(z_arr, S)
    else:
        flat = z_arr.reshape(-1).astype(np.int64)
        value = np.exp(_log_pmf_rows(flat, S, N)).reshape(z_arr.shape) if flat.size else np.empty(0)
    return float(value) if np.ndim(value) == 0 else value


def adaptive_z_max(
    S: float,
    N: float,
    tail: Optional[float] = None,
    cap: Optional[int] = None,
) -> int:
    """Smallest z_max whose cumulative mass reaches 1 − tail."""
    _check_law(S, N)
    defaults = Settings.get_receiver_defaults()
    tail = defaults.tail_mass if tail is None else tail
    cap = defaults.z_cap if cap is None else cap
    if N <= defaults.n_floor:
        z_max = int(stats.poisson.isf(tail, S)) if S > 0 else 0
        return max(1, min(z_max, cap))
    total = 0.0
    for start in range(0, cap + 1, _ROW_CHUNK):
        rows = np.arange(start, min(start + _ROW_CHUNK, cap + 1))
        cumulative = total + np.cumsum(np.exp(_log_pmf_rows(rows, S, N)))
        reached = np.flatnonzero(cumulative >= 1.0 - tail)
        if reached.size:
            return max(1, int(rows[reached[0]]))
        total = float(cumulative[-1])
    logger.warning("count law tail above %.1e at the cap z_max=%d (S=%g, N=%g)", tail, cap, S, N)
    return cap


def sample_counts(gamma, I_t, link: LinkParams, rng: np.random.Generator) -> np.ndarray:
    """
    Photon counts for arrays of symbols and fading values.

    The displaced thermal state is a Gaussian mixture of coherent states, so
    z ~ Poisson(|α_ord + η|²) with η complex Gaussian of variance N/2 per
    quadrature has exactly the displaced thermal count law.
    """
    alpha = np.asarray(displaced_amplitude(gamma, I_t, link), dtype=complex)
    spread = math.sqrt(link.receiver.N / 2.0)
    noise = rng.normal(0.0, spread, alpha.shape) + 1j * rng.normal(0.0, spread, alpha.shape)
    return rng.poisson(np.abs(alpha + noise) ** 2)


def sample_count(gamma: complex, I_t: float, link: LinkParams, rng: np.random.Generator) -> int:
    return int(sample_counts(np.array([gamma]), np.array([I_t]), link, rng)[0])


def sample_counts_at_energy(S: float, N: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Counts at a fixed displaced energy S."""
    _check_law(S, N)
    spread = math.sqrt(N / 2.0)
    field_ = math.sqrt(S) + rng.normal(0.0, spread, n) + 1j * rng.normal(0.0, spread, n)
    return rng.poisson(np.abs(field_) ** 2)


def sample_homodyne(x_A, I_t, link: LinkParams, rng: np.random.Generator) -> np.ndarray:
    """Y = √(I_p I_t)·μ·x_A + n_H with n_H ~ N(0, σ_H²)."""
    signal = link.amplitude * np.sqrt(I_t) * np.asarray(x_A, dtype=float)
    return signal + rng.normal(0.0, link.receiver.sigma_H, np.shape(signal))
