"""
Prepare-and-measure model of the virtually photon-subtracted transmitter.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np
from scipy import integrate, special, stats

from uwqkd.errors import DomainError
from uwqkd.specfun import integrate_semi_infinite

MAX_SUBTRACTED = 10


@dataclass(frozen=True)
class SourceParams:
    """Transmitter constants; mu, V_T, y and w are derived."""

    T: float
    zeta: float
    m: int
    mu: float = field(init=False)
    V_T: float = field(init=False)
    y: float = field(init=False)
    w: float = field(init=False)

    def __post_init__(self):
        self.clean()
        zeta2 = self.zeta * self.zeta
        V_T = (1.0 + zeta2) / (1.0 - zeta2)
        y = (1.0 - self.T) * zeta2 / 2.0
        object.__setattr__(self, "mu", math.sqrt(2.0 * self.T) * self.zeta / 2.0)
        object.__setattr__(self, "V_T", V_T)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", y + 1.0 / (V_T + 1.0))
        if self.y == 0 and self.m > 0:
            raise DomainError("T = 1 leaves no accepted states for m >= 1")

    def clean(self):
        if not 0 < self.T <= 1:
            raise DomainError(f"T must lie in (0, 1], got {self.T!r}")
        if not 0 < self.zeta < 1:
            raise DomainError(f"zeta must lie in (0, 1), got {self.zeta!r}")
        if isinstance(self.m, bool) or int(self.m) != self.m or not 0 <= self.m <= MAX_SUBTRACTED:
            raise DomainError(f"m must be an integer in [0, {MAX_SUBTRACTED}], got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def prior_variance(self) -> float:
        """Per-quadrature variance of the Gaussian prior."""
        return (self.V_T + 1.0) / 2.0

    @property
    def log_filter_norm(self) -> float:
        """ln[y^m / (m! π (V_T+1))], the constant in front of r^{2m} e^{-w r^2}."""
        return (
            float(special.xlogy(self.m, self.y))
            - float(special.gammaln(self.m + 1))
            - math.log(math.pi)
            - math.log(self.V_T + 1.0)
        )

    def as_json(self):
        return asdict(self)


@dataclass(frozen=True)
class AcceptedSample:
    gamma_re: float
    gamma_im: float
    bit: int

    def __post_init__(self):
        if self.bit != bit_of(self.gamma_re):
            raise DomainError("bit must be 0 exactly when gamma_re >= 0")

    @property
    def gamma(self) -> complex:
        return complex(self.gamma_re, self.gamma_im)


def derive_source_constants(T: float, zeta: float, m: int) -> SourceParams:
    return SourceParams(T=T, zeta=zeta, m=m)


def bit_of(x_A):
    """Bit label of a real quadrature: 0 for x_A >= 0, else 1."""
    if np.ndim(x_A):
        return (np.asarray(x_A) < 0).astype(np.int8)
    return 0 if x_A >= 0 else 1


def vps_filter(gamma, params: SourceParams):
    """Post-selection filter Q_m(γ) = Poisson(m; y|γ|²)."""
    r2 = np.abs(np.asarray(gamma, dtype=complex)) ** 2
    value = stats.poisson.pmf(params.m, params.y * r2)
    return float(value) if np.ndim(value) == 0 else value


def prior_density(gamma, params: SourceParams):
    r2 = np.abs(np.asarray(gamma, dtype=complex)) ** 2
    value = np.exp(-r2 / (params.V_T + 1.0)) / (math.pi * (params.V_T + 1.0))
    return float(value) if np.ndim(value) == 0 else value


def acceptance_probability(params: SourceParams) -> float:
    """P_acc = y^m / ((V_T+1) w^{m+1})."""
    log_p = (
        float(special.xlogy(params.m, params.y))
        - math.log(params.V_T + 1.0)
        - (params.m + 1) * math.log(params.w)
    )
    return math.exp(log_p)


def per_bit_acceptance(params: SourceParams, b: int, method: str = "polar") -> float:
    """
    Joint probability of acceptance and bit b.

    ``polar`` integrates the radial law over the half-plane's angular range
    of width π; ``cartesian`` integrates Q_m·p_G over the half-plane directly.
    """
    if b not in (0, 1):
        raise DomainError(f"bit must be 0 or 1, got {b!r}")
    if method == "polar":
        radial = integrate_semi_infinite(
            lambda r: r * vps_filter(r, params) * prior_density(r, params),
            scale=math.sqrt((params.m + 0.5) / params.w),
        )
        return math.pi * radial
    if method == "cartesian":
        sign = 1.0 if b == 0 else -1.0
        value, _ = integrate.dblquad(
            lambda p, x: vps_filter(complex(sign * x, p), params)
            * prior_density(complex(sign * x, p), params),
            0.0,
            np.inf,
            -np.inf,
            np.inf,
            epsabs=1e-13,
            epsrel=1e-11,
        )
        return float(value)
    raise DomainError(f"unknown method {method!r}")


def accepted_density(gamma, b: int, params: SourceParams):
    """Accepted-only density p_acc(γ|b), zero off the bit's half-plane."""
    gamma = np.asarray(gamma, dtype=complex)
    inside = bit_of(gamma.real) == b
    value = np.where(
        inside, vps_filter(gamma, params) * prior_density(gamma, params), 0.0
    ) / (acceptance_probability(params) / 2.0)
    return float(value) if np.ndim(value) == 0 else value


def accepted_radial_cdf(r, params: SourceParams):
    """P(|γ| <= r | accepted) = P(m+1, w r²)."""
    r = np.asarray(r, dtype=float)
    value = special.gammainc(params.m + 1, params.w * np.clip(r, 0.0, None) ** 2)
    return float(value) if value.ndim == 0 else value


def sample_accepted(params: SourceParams, rng: np.random.Generator) -> AcceptedSample:
    scale = math.sqrt(params.prior_variance)
    while True:
        x, p = rng.normal(0.0, scale, 2)
        if rng.random() < vps_filter(complex(x, p), params):
            return AcceptedSample(gamma_re=float(x), gamma_im=float(p), bit=bit_of(x))


def sample_accepted_batch(
    params: SourceParams, n: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Draw n accepted symbols by vectorized rejection.

    Returns:
        (gamma, bits, attempts) with gamma complex of shape (n,).
    """
    scale = math.sqrt(params.prior_variance)
    p_acc = acceptance_probability(params)
    chunks = []
    have = 0
    attempts = 0
    while have < n:
        draw = int(math.ceil((n - have) / p_acc * 1.1)) + 16
        x = rng.normal(0.0, scale, draw)
        p = rng.normal(0.0, scale, draw)
        u = rng.random(draw)
        gamma = x + 1j * p
        accepted = u < vps_filter(gamma, params)
        if have + int(accepted.sum()) >= n:
            # stop counting attempts at the n-th acceptance
            last = int(np.flatnonzero(accepted)[n - have - 1])
            accepted[last + 1 :] = False
            attempts += last + 1
        else:
            attempts += draw
        kept = gamma[accepted]
        chunks.append(kept)
        have += kept.size
    gamma = np.concatenate(chunks) if chunks else np.empty(0, dtype=complex)
    return gamma, bit_of(gamma.real), attempts
