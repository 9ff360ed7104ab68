"""
Experiment configuration files: YAML documents validated by pydantic.

All violations of a document are reported together, each with its dotted
location and, when it can be traced, the YAML source line.
"""

import math
from pathlib import Path
from typing import Any, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from uwqkd.channel import DOCUMENTED_WATERS, WATER_PRESETS, TurbulenceModel
from uwqkd.detectors import Scheme
from uwqkd.errors import ConfigError, ConfigViolation
from uwqkd.montecarlo import MAX_SEED, RealizationMode, TrialUnit
from uwqkd.source import MAX_SUBTRACTED

FIXTURES = Path(__file__).resolve().parent / "fixtures"
PRESETS_FILE = FIXTURES / "presets.yaml"

# Parameter ranges studied for the link; values outside need `extrapolated: true`.
DOCUMENTED_RANGES = {
    "m": (0, 3),
    "N": (0.001, 1.0),
    "theta": (1, 12),
    "lambda": (1.0, 12.0),
    "L": (1, 12),
}


def _as_list(value):
    return value if isinstance(value, list) else [value]


def _as_optional_list(value):
    return None if value is None else _as_list(value)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SourceSection(_Section):
    T: float = Field(0.95, gt=0, le=1)
    zeta: float = Field(0.85, gt=0, lt=1)
    m: List[int] = Field(default_factory=lambda: [1], min_length=1)

    listify = field_validator("m", mode="before")(_as_list)

    @field_validator("m")
    @classmethod
    def check_m(cls, value: List[int]) -> List[int]:
        for m in value:
            if not 0 <= m <= MAX_SUBTRACTED:
                raise ValueError(f"m must be an integer in [0, {MAX_SUBTRACTED}]")
        return value


class TurbulenceSection(_Section):
    theta: Optional[int] = None
    lambda_E: Optional[float] = Field(None, alias="lambda", gt=0)
    sigma_X: Optional[float] = Field(None, gt=0)

    @field_validator("theta")
    @classmethod
    def check_theta(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("Erlang shape theta must be a positive integer (theta >= 1)")
        return value

    @model_validator(mode="after")
    def check_kind(self):
        erlang = self.theta is not None or self.lambda_E is not None
        if erlang and self.sigma_X is not None:
            raise ValueError("give either theta/lambda (Erlang) or sigma_X (log-normal), not both")
        if erlang and (self.theta is None or self.lambda_E is None):
            raise ValueError("the Erlang model needs both theta and lambda")
        if not erlang and self.sigma_X is None:
            raise ValueError("turbulence needs theta/lambda or sigma_X")
        return self

    def model(self) -> TurbulenceModel:
        if self.sigma_X is not None:
            return TurbulenceModel.lognormal(self.sigma_X)
        return TurbulenceModel.erlang(self.theta, self.lambda_E)


class ChannelSection(_Section):
    water: Optional[List[str]] = None
    extinction_c: Optional[float] = Field(None, gt=0)
    distances: List[float] = Field(min_length=1)
    turbulence: List[TurbulenceSection] = Field(
        default_factory=lambda: [TurbulenceSection(theta=3, lambda_E=3.0)], min_length=1
    )

    listify = field_validator("water", "distances", "turbulence", mode="before")(_as_optional_list)

    @field_validator("water")
    @classmethod
    def check_water(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        for name in value or ():
            if name not in WATER_PRESETS:
                raise ValueError(f"unknown water type '{name}'; expected one of {sorted(WATER_PRESETS)}")
        return value

    @field_validator("distances")
    @classmethod
    def check_distances(cls, value: List[float]) -> List[float]:
        if any(not math.isfinite(d) or d < 0 for d in value):
            raise ValueError("distances must be finite and non-negative")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("distances must be strictly increasing")
        return value

    @model_validator(mode="after")
    def check_extinction(self):
        if self.water is not None and self.extinction_c is not None:
            raise ValueError("water preset and explicit extinction_c conflict; give only one")
        if self.water is None and self.extinction_c is None:
            raise ValueError("one of water or extinction_c is required")
        return self

    def extinctions(self) -> List[Tuple[str, float]]:
        """(label, c) pairs of the water axis."""
        if self.water is not None:
            return [(name, WATER_PRESETS[name]) for name in self.water]
        return [("custom", self.extinction_c)]


class ReceiverSection(_Section):
    N: List[float] = Field(default_factory=lambda: [0.001], min_length=1)
    delta_mode: Literal["fixed", "optimize"] = "optimize"
    delta: Optional[float] = Field(None, ge=0)
    delta_phase: float = 0.0
    sigma_H: float = Field(math.sqrt(0.5), gt=0)
    z_max: Union[Literal["adaptive"], int] = "adaptive"

    listify = field_validator("N", mode="before")(_as_list)

    @field_validator("N")
    @classmethod
    def check_N(cls, value: List[float]) -> List[float]:
        if any(not math.isfinite(n) or n < 0 for n in value):
            raise ValueError("thermal photon numbers must be finite and >= 0")
        return value

    @field_validator("z_max")
    @classmethod
    def check_z_max(cls, value):
        if value != "adaptive" and value < 1:
            raise ValueError("z_max must be 'adaptive' or an integer >= 1")
        return value

    @model_validator(mode="after")
    def check_delta(self):
        if self.delta_mode == "fixed" and self.delta is None:
            raise ValueError("delta_mode 'fixed' needs a delta value")
        return self


class DetectionSection(_Section):
    schemes: List[Scheme] = Field(default_factory=lambda: [Scheme.HD, Scheme.QMLD, Scheme.QMSD])
    L: List[int] = Field(default_factory=lambda: [4], min_length=1)

    listify = field_validator("schemes", "L", mode="before")(_as_list)

    @field_validator("L")
    @classmethod
    def check_L(cls, value: List[int]) -> List[int]:
        if any(not 1 <= L <= 12 for L in value):
            raise ValueError("block lengths must lie in 1..12")
        return value


class McSection(_Section):
    trials: int = Field(0, ge=0)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    realization: RealizationMode = RealizationMode.BLOCK
    trial_unit: TrialUnit = TrialUnit.BITS


class OutputSection(_Section):
    directory: str = "results"
    stem: str = "sweep"
    format: Literal["csv", "csv+svg"] = "csv"


class ExperimentConfig(_Section):
    name: str = "experiment"
    extrapolated: bool = False
    source: SourceSection = Field(default_factory=SourceSection)
    channel: ChannelSection
    receiver: ReceiverSection = Field(default_factory=ReceiverSection)
    detection: DetectionSection = Field(default_factory=DetectionSection)
    mc: McSection = Field(default_factory=McSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def to_yaml(self) -> str:
        data = self.model_dump(mode="json", by_alias=True, exclude_none=True)
        return yaml.safe_dump(data, sort_keys=False)


def _dotted(loc: Sequence[Any]) -> str:
    return ".".join(str(part) for part in loc) or "<document>"


def _line_of(node: Optional[yaml.Node], loc: Sequence[Any]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along ``loc``."""
    if node is None:
        return None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            matches = [value for key, value in node.value if key.value == str(part)]
            if not matches:
                break
            node = matches[0]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            break
    return node.start_mark.line + 1


def documented_range_violations(config: ExperimentConfig) -> Iterable[Tuple[tuple, str]]:
    """Values outside the studied parameter ranges."""

    def outside(key, value):
        lo, hi = DOCUMENTED_RANGES[key]
        return not lo <= value <= hi

    for index, m in enumerate(config.source.m):
        if outside("m", m):
            yield ("source", "m", index), f"m={m} outside the documented range {DOCUMENTED_RANGES['m']}"
    for index, N in enumerate(config.receiver.N):
        if outside("N", N):
            yield ("receiver", "N", index), f"N={N} outside the documented range {DOCUMENTED_RANGES['N']}"
    for index, section in enumerate(config.channel.turbulence):
        if section.theta is not None and outside("theta", section.theta):
            yield ("channel", "turbulence", index, "theta"), f"theta={section.theta} outside the documented range"
        if section.lambda_E is not None and outside("lambda", section.lambda_E):
            yield ("channel", "turbulence", index, "lambda"), f"lambda={section.lambda_E} outside the documented range"
    for index, name in enumerate(config.channel.water or ()):
        if name not in DOCUMENTED_WATERS:
            yield ("channel", "water", index), f"water '{name}' is not one of the documented {DOCUMENTED_WATERS}"


def validate_config(
    data: Any, node: Optional[yaml.Node] = None, source: str = ""
) -> ExperimentConfig:
    """Validate a loaded document, collecting every violation."""
    if not isinstance(data, dict):
        raise ConfigError(
            [ConfigViolation("<document>", "top level must be a mapping", _line_of(node, ()))], source
        )
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(
            [
                ConfigViolation(_dotted(err["loc"]), err["msg"], _line_of(node, err["loc"]))
                for err in e.errors()
            ],
            source,
        )
    if not config.extrapolated:
        violations = [
            ConfigViolation(_dotted(loc), f"{message}; set 'extrapolated: true' to allow it", _line_of(node, loc))
            for loc, message in documented_range_violations(config)
        ]
        if violations:
            raise ConfigError(violations, source)
    return config


def _compose(text: str, source: str) -> Tuple[Any, Optional[yaml.Node]]:
    try:
        return yaml.safe_load(text), yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(
            [ConfigViolation("<document>", str(getattr(e, "problem", None) or e), mark.line + 1 if mark else None)],
            source,
        )


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    data, node = _compose(text, source)
    return validate_config(data, node, source)


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([ConfigViolation("<document>", f"cannot read file: {e.strerror}")], str(path))
    return parse_config_text(text, str(path))


def preset_names() -> List[str]:
    with open(PRESETS_FILE, encoding="utf-8") as f:
        return list(yaml.safe_load(f))


def load_preset(name: str) -> ExperimentConfig:
    """Validated figure-reproduction preset from the bundled fixtures."""
    text = PRESETS_FILE.read_text(encoding="utf-8")
    data, node = _compose(text, str(PRESETS_FILE))
    if name not in data:
        raise ConfigError(
            [ConfigViolation(name, f"unknown preset; expected one of {sorted(data)}")], str(PRESETS_FILE)
        )
    subtree = next(value for key, value in node.value if key.value == name)
    return validate_config(data[name], subtree, f"{PRESETS_FILE}:{name}")
