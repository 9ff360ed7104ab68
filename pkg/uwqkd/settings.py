import copy
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Dict, List

from uwqkd.errors import ImproperlyConfigured


# Package-wide numeric defaults. Each section is turned into a frozen
# dataclass by the Settings accessors below.
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "quadrature": {"rel_tol": 1e-10, "abs_tol": 1e-300, "max_subdivisions": 2000},
    "series": {"eps_series": 1e-12, "j_max": 200, "j_cap": 3200},
    "receiver": {
        "n_floor": 1e-9,
        "tail_mass": 1e-10,
        "z_cap": 4096,
        "sigma_h": math.sqrt(0.5),
        "tail_warning": 1e-8,
    },
    "fading": {
        "initial_order": 32,
        "max_order": 512,
        "tolerance": 1e-13,
        "probe_counts": 8,
        "tail_probability": 1e-17,
    },
    "displacement": {
        "grid_points": 16,
        "tolerance": 1e-4,
        "upper": 3.0,
        "max_upper": 8.0,
        "flat_tolerance": 1e-9,
    },
    "qmsd": {
        "max_block": 12,
        "enumeration_max_block": 4,
        "enumeration_z_max": 20,
        "tricomi_max_block": 4,
        "tricomi_max_count": 6,
        "decision_cache": 65_536,
    },
    "montecarlo": {
        "trials": 1_000_000,
        "figure_trials": 3000,
        "shard_blocks": 25_000,
        "tv_threshold": 5e-3,
        "ks_threshold": 0.01,
        "relax_below": 100_000,
        "relax_factor": 3.0,
    },
}

UWQKD: Dict[str, Dict[str, Any]] = copy.deepcopy(DEFAULTS)

# Memoized functions elsewhere in the package whose results depend on UWQKD.
_DEPENDENT_CACHES: List[Callable] = []


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for adaptive quadrature."""

    rel_tol: float = 1e-10
    abs_tol: float = 1e-300
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ImproperlyConfigured("quadrature.rel_tol must be positive")
        if not self.abs_tol >= 0:
            raise ImproperlyConfigured("quadrature.abs_tol must be non-negative")
        if int(self.max_subdivisions) < 1:
            raise ImproperlyConfigured("quadrature.max_subdivisions must be >= 1")

    def acceptable_error(self, value: float, floor: float = 0.0) -> float:
        """
        Largest error bound still accepted when QUADPACK flags a problem.

        ``floor`` is an absolute bound below which the error cannot matter to
        the enclosing computation.
        """
        return max(self.abs_tol, floor, math.sqrt(self.rel_tol) * abs(value))


@dataclass(frozen=True)
class SeriesControl:
    """Truncation rule for the j-series of the angular moments."""

    eps_series: float = 1e-12
    j_max: int = 200
    j_cap: int = 3200

    def __post_init__(self):
        if not self.eps_series > 0:
            raise ImproperlyConfigured("series.eps_series must be positive")
        if int(self.j_max) < 1:
            raise ImproperlyConfigured("series.j_max must be >= 1")
        if int(self.j_cap) < int(self.j_max):
            raise ImproperlyConfigured("series.j_cap must be >= series.j_max")


@dataclass(frozen=True)
class ReceiverDefaults:
    n_floor: float = 1e-9
    tail_mass: float = 1e-10
    z_cap: int = 4096
    sigma_h: float = math.sqrt(0.5)
    tail_warning: float = 1e-8


@dataclass(frozen=True)
class FadingRule:
    """Order refinement for the Erlang fading average."""

    initial_order: int = 32
    max_order: int = 512
    tolerance: float = 1e-13
    probe_counts: int = 8
    tail_probability: float = 1e-17


@dataclass(frozen=True)
class DisplacementSearch:
    grid_points: int = 16
    tolerance: float = 1e-4
    upper: float = 3.0
    max_upper: float = 8.0
    flat_tolerance: float = 1e-9

    def __post_init__(self):
        if self.grid_points < 3:
            raise ImproperlyConfigured("displacement.grid_points must be >= 3")
        if not self.upper > 0:
            raise ImproperlyConfigured("displacement.upper must be positive")
        if self.max_upper < self.upper:
            raise ImproperlyConfigured("displacement.max_upper must be >= displacement.upper")


@dataclass(frozen=True)
class QmsdBudget:
    max_block: int = 12
    enumeration_max_block: int = 4
    enumeration_z_max: int = 20
    tricomi_max_block: int = 4
    tricomi_max_count: int = 6
    decision_cache: int = 65_536


@dataclass(frozen=True)
class McDefaults:
    trials: int = 1_000_000
    figure_trials: int = 3000
    shard_blocks: int = 25_000
    tv_threshold: float = 5e-3
    ks_threshold: float = 0.01
    relax_below: int = 100_000
    relax_factor: float = 3.0


class Settings:
    """
    Access point for the package numeric settings.

    Each section of ``UWQKD`` is exposed as a frozen dataclass, memoized
    until ``clear_cache()`` is called.
    """

    @staticmethod
    def get_setting(section: str, default: Any = None) -> Any:
        """
        Get a section from the UWQKD settings.

        Raises:
            ImproperlyConfigured: If the section is missing and no default
                was given.
        """
        if UWQKD is None:
            raise ImproperlyConfigured("The UWQKD settings mapping is required.")
        value = UWQKD.get(section, default)
        if value is None:
            raise ImproperlyConfigured(f"Missing UWQKD settings section '{section}'.")
        return value

    @classmethod
    def _build(cls, section: str, config_class):
        values = cls.get_setting(section)
        if not isinstance(values, dict):
            raise ImproperlyConfigured(
                f"UWQKD['{section}'] must be a mapping, got {type(values).__name__}"
            )
        try:
            return config_class(**values)
        except TypeError as e:
            raise ImproperlyConfigured(f"Invalid UWQKD['{section}']: {e}")

    @classmethod
    @lru_cache(maxsize=1)
    def get_quadrature_spec(cls) -> QuadratureSpec:
        return cls._build("quadrature", QuadratureSpec)

    @classmethod
    @lru_cache(maxsize=1)
    def get_series_control(cls) -> SeriesControl:
        return cls._build("series", SeriesControl)

    @classmethod
    @lru_cache(maxsize=1)
    def get_receiver_defaults(cls) -> ReceiverDefaults:
        return cls._build("receiver", ReceiverDefaults)

    @classmethod
    @lru_cache(maxsize=1)
    def get_fading_rule(cls) -> FadingRule:
        return cls._build("fading", FadingRule)

    @classmethod
    @lru_cache(maxsize=1)
    def get_displacement_search(cls) -> DisplacementSearch:
        return cls._build("displacement", DisplacementSearch)

    @classmethod
    @lru_cache(maxsize=1)
    def get_qmsd_budget(cls) -> QmsdBudget:
        return cls._build("qmsd", QmsdBudget)

    @classmethod
    @lru_cache(maxsize=1)
    def get_mc_defaults(cls) -> McDefaults:
        return cls._build("montecarlo", McDefaults)

    @classmethod
    def configure(cls, **sections: Dict[str, Any]) -> None:
        """Override keys of one or more sections and drop memoized views."""
        for name, values in sections.items():
            if name not in DEFAULTS:
                raise ImproperlyConfigured(f"Unknown UWQKD settings section '{name}'.")
            UWQKD.setdefault(name, {}).update(values)
        cls.clear_cache()

    @classmethod
    def reset(cls) -> None:
        """Restore the package defaults (useful for testing)."""
        UWQKD.clear()
        UWQKD.update(copy.deepcopy(DEFAULTS))
        cls.clear_cache()

    @staticmethod
    def snapshot() -> Dict[str, Dict[str, Any]]:
        """Deep copy of the current mapping, e.g. to hand to worker processes."""
        return copy.deepcopy(UWQKD)

    @classmethod
    def restore(cls, snapshot: Dict[str, Dict[str, Any]]) -> None:
        """Replace the mapping with ``snapshot``; a no-op when nothing differs."""
        if snapshot == UWQKD:
            return
        UWQKD.clear()
        UWQKD.update(copy.deepcopy(snapshot))
        cls.clear_cache()

    @staticmethod
    def register_cache(func: Callable) -> Callable:
        """Have ``clear_cache`` also clear the ``lru_cache`` of ``func``."""
        _DEPENDENT_CACHES.append(func)
        return func

    @classmethod
    def clear_cache(cls) -> None:
        """Clear all memoized sections (useful for testing)."""
        cls.get_quadrature_spec.cache_clear()
        cls.get_series_control.cache_clear()
        cls.get_receiver_defaults.cache_clear()
        cls.get_fading_rule.cache_clear()
        cls.get_displacement_search.cache_clear()
        cls.get_qmsd_budget.cache_clear()
        cls.get_mc_defaults.cache_clear()
        for func in _DEPENDENT_CACHES:
            func.cache_clear()
