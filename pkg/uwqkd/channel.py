"""
Underwater channel: Beer–Lambert path loss and unit-mean turbulence fading.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import special

from uwqkd.errors import DomainError

# Extinction coefficients c in 1/m.
WATER_PRESETS = {
    "clear": 0.151,
    "coastal": 0.339,
    "pure": 0.056,
    "harbor": 2.17,
}
DOCUMENTED_WATERS = ("clear", "coastal")


class TurbulenceKind(str, Enum):
    LOGNORMAL = "lognormal"
    ERLANG = "erlang"


@dataclass(frozen=True)
class TurbulenceModel:
    kind: TurbulenceKind
    sigma_X: Optional[float] = None
    theta: Optional[int] = None
    lambda_E: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TurbulenceKind(self.kind))
        self.clean()

    def clean(self):
        if self.kind is TurbulenceKind.ERLANG:
            if (
                self.theta is None
                or isinstance(self.theta, bool)
                or int(self.theta) != self.theta
                or self.theta < 1
            ):
                raise DomainError(f"Erlang shape theta must be a positive integer, got {self.theta!r}")
            if self.lambda_E is None or not self.lambda_E > 0 or not math.isfinite(self.lambda_E):
                raise DomainError(f"Erlang rate lambda_E must be positive, got {self.lambda_E!r}")
            object.__setattr__(self, "theta", int(self.theta))
            object.__setattr__(self, "lambda_E", float(self.lambda_E))
        else:
            if self.sigma_X is None or not self.sigma_X > 0 or not math.isfinite(self.sigma_X):
                raise DomainError(f"sigma_X must be positive, got {self.sigma_X!r}")
            object.__setattr__(self, "sigma_X", float(self.sigma_X))

    @classmethod
    def erlang(cls, theta: int, lambda_E: float) -> "TurbulenceModel":
        return cls(kind=TurbulenceKind.ERLANG, theta=theta, lambda_E=lambda_E)

    @classmethod
    def lognormal(cls, sigma_X: float) -> "TurbulenceModel":
        return cls(kind=TurbulenceKind.LOGNORMAL, sigma_X=sigma_X)

    @property
    def is_erlang(self) -> bool:
        return self.kind is TurbulenceKind.ERLANG

    @property
    def mean(self) -> float:
        return self.theta / self.lambda_E if self.is_erlang else 1.0

    @property
    def variance(self) -> float:
        if self.is_erlang:
            return self.theta / self.lambda_E**2
        return math.expm1(self.sigma_X**2)

    def as_erlang(self) -> "TurbulenceModel":
        """Erlang model used by the analytic paths."""
        return self if self.is_erlang else match_erlang(self.sigma_X)

    def pdf(self, I_t):
        if self.is_erlang:
            return erlang_pdf(I_t, self.theta, self.lambda_E)
        return lognormal_pdf(I_t, self.sigma_X)

    def cdf(self, I_t):
        if self.is_erlang:
            return erlang_cdf(I_t, self.theta, self.lambda_E)
        return lognormal_cdf(I_t, self.sigma_X)

    def as_json(self):
        if self.is_erlang:
            return {"kind": self.kind.value, "theta": self.theta, "lambda": self.lambda_E}
        return {"kind": self.kind.value, "sigma_X": self.sigma_X}


@dataclass(frozen=True)
class ChannelParams:
    extinction_c: float
    distance_d: float
    turbulence: TurbulenceModel
    I_p: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "I_p", path_loss(self.extinction_c, self.distance_d))

    @classmethod
    def from_water(cls, water: str, distance_d: float, turbulence: TurbulenceModel) -> "ChannelParams":
        try:
            c = WATER_PRESETS[water]
        except KeyError:
            raise DomainError(
                f"Unknown water type '{water}'; expected one of {sorted(WATER_PRESETS)}"
            )
        return cls(extinction_c=c, distance_d=distance_d, turbulence=turbulence)

    def as_json(self):
        return {
            "extinction_c": self.extinction_c,
            "distance_d": self.distance_d,
            "I_p": self.I_p,
            "turbulence": self.turbulence.as_json(),
        }


def path_loss(c: float, d: float) -> float:
    """Beer–Lambert transmittance e^{-c d}."""
    if not c > 0 or not math.isfinite(c):
        raise DomainError(f"extinction coefficient must be positive, got {c!r}")
    if not d >= 0 or not math.isfinite(d):
        raise DomainError(f"distance must be non-negative, got {d!r}")
    return math.exp(-c * d)


def channel_gain(I_t, channel: ChannelParams):
    """Overall gain I = I_p·I_t."""
    return channel.I_p * I_t


def _check_erlang(theta, lambda_E):
    TurbulenceModel.erlang(theta, lambda_E)


def erlang_pdf(I_t, theta: int, lambda_E: float):
    _check_erlang(theta, lambda_E)
    I_t = np.asarray(I_t, dtype=float)
    positive = I_t > 0
    safe = np.where(positive, I_t, 1.0)
    log_pdf = (
        theta * math.log(lambda_E)
        + (theta - 1) * np.log(safe)
        - lambda_E * safe
        - special.gammaln(theta)
    )
    value = np.where(positive, np.exp(log_pdf), 0.0)
    return float(value) if value.ndim == 0 else value


def erlang_cdf(I_t, theta: int, lambda_E: float):
    _check_erlang(theta, lambda_E)
    value = special.gammainc(theta, lambda_E * np.clip(np.asarray(I_t, dtype=float), 0.0, None))
    return float(value) if value.ndim == 0 else value


def lognormal_pdf(I_t, sigma_X: float):
    if not sigma_X > 0:
        raise DomainError(f"sigma_X must be positive, got {sigma_X!r}")
    I_t = np.asarray(I_t, dtype=float)
    positive = I_t > 0
    safe = np.where(positive, I_t, 1.0)
    z = (np.log(safe) + sigma_X**2 / 2.0) / sigma_X
    value = np.where(positive, np.exp(-0.5 * z * z) / (safe * sigma_X * math.sqrt(2 * math.pi)), 0.0)
    return float(value) if value.ndim == 0 else value


def lognormal_cdf(I_t, sigma_X: float):
    if not sigma_X > 0:
        raise DomainError(f"sigma_X must be positive, got {sigma_X!r}")
    I_t = np.asarray(I_t, dtype=float)
    positive = I_t > 0
    safe = np.where(positive, I_t, 1.0)
    value = np.where(positive, special.ndtr((np.log(safe) + sigma_X**2 / 2.0) / sigma_X), 0.0)
    return float(value) if value.ndim == 0 else value


def match_erlang(sigma_X: float) -> TurbulenceModel:
    """Unit-mean Erlang law whose variance 1/θ approximates e^{σ²}−1."""
    if not sigma_X > 0:
        raise DomainError(f"sigma_X must be positive, got {sigma_X!r}")
    variance = math.expm1(sigma_X**2)
    theta = max(1, int(math.floor(1.0 / variance + 0.5))) if math.isfinite(variance) else 1
    return TurbulenceModel.erlang(theta, float(theta))


def sample_turbulence_batch(model: TurbulenceModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if model.is_erlang:
        return rng.standard_exponential((n, model.theta)).sum(axis=1) / model.lambda_E
    g = rng.standard_normal(n)
    return np.exp(model.sigma_X * g - model.sigma_X**2 / 2.0)


def sample_turbulence(model: TurbulenceModel, rng: np.random.Generator) -> float:
    return float(sample_turbulence_batch(model, 1, rng)[0])
