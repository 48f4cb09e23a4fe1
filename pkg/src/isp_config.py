"""
Pipeline configuration.

An IspConfig is a frozen tree of per-stage settings. It can be read from a
nested YAML file (config/isp_config.yaml) or from a flat text file of dotted
`stage.key=value` lines (config/isp_config.cfg); both end up in the same
flat mapping, whose values are decoded with yaml.safe_load so booleans,
numbers and lists keep their native types.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .denoise import METHODS as DENOISE_METHODS
from .errors import ConfigError, IoError

logger = logging.getLogger(__name__)

WB_MODES = ("checker", "fixed")
CCM_MODES = ("fit", "file", "identity")


@dataclass(frozen=True)
class DarkStage:
    enabled: bool = False
    calibration: Optional[str] = None
    exposure_time: Optional[float] = None


@dataclass(frozen=True)
class HoleStage:
    guided: bool = False


@dataclass(frozen=True)
class DemosaicStage:
    margin: float = 0.2
    event_guided: bool = False


@dataclass(frozen=True)
class WbStage:
    enabled: bool = True
    mode: str = "fixed"
    gains: Tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class HighlightStage:
    enabled: bool = True
    fraction: float = 0.95


@dataclass(frozen=True)
class DenoiseStage:
    method: str = "none"
    sigma: float = 50.0 / 255.0
    event_weighted: bool = False
    decay: float = 0.5


@dataclass(frozen=True)
class CcmStage:
    mode: str = "identity"
    path: Optional[str] = None
    reference: Optional[str] = None
    white_preserve: bool = False
    exposure_normalize: bool = True
    window_fraction: float = 0.25


@dataclass(frozen=True)
class GammaStage:
    enabled: bool = True


@dataclass(frozen=True)
class EventsStage:
    log_floor: float = 1e-3


@dataclass(frozen=True)
class IspConfig:
    """Stage-by-stage settings of the controllable ISP."""
    dark: DarkStage = field(default_factory=DarkStage)
    holes: HoleStage = field(default_factory=HoleStage)
    demosaic: DemosaicStage = field(default_factory=DemosaicStage)
    wb: WbStage = field(default_factory=WbStage)
    highlight: HighlightStage = field(default_factory=HighlightStage)
    denoise: DenoiseStage = field(default_factory=DenoiseStage)
    ccm: CcmStage = field(default_factory=CcmStage)
    gamma: GammaStage = field(default_factory=GammaStage)
    events: EventsStage = field(default_factory=EventsStage)

    def validate(self) -> "IspConfig":
        if self.demosaic.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.demosaic.margin}", "demosaic")
        if self.wb.mode not in WB_MODES:
            raise ConfigError(f"mode must be one of {', '.join(WB_MODES)}, got {self.wb.mode!r}", "wb")
        if len(self.wb.gains) != 3 or min(self.wb.gains) <= 0 or self.wb.gains[1] != 1.0:
            raise ConfigError(f"gains must be three positive values with green == 1, got {self.wb.gains}", "wb")
        if not 0 < self.highlight.fraction <= 1:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.highlight.fraction}", "highlight")
        if self.denoise.method not in DENOISE_METHODS:
            raise ConfigError(f"method must be one of {', '.join(DENOISE_METHODS)}, got {self.denoise.method!r}",
                              "denoise")
        if self.denoise.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.denoise.sigma}", "denoise")
        if self.denoise.decay < 0:
            raise ConfigError(f"decay must be >= 0, got {self.denoise.decay}", "denoise")
        if self.ccm.mode not in CCM_MODES:
            raise ConfigError(f"mode must be one of {', '.join(CCM_MODES)}, got {self.ccm.mode!r}", "ccm")
        if not self.ccm.window_fraction > 0:
            raise ConfigError(f"window_fraction must be > 0, got {self.ccm.window_fraction}", "ccm")
        if self.dark.exposure_time is not None and self.dark.exposure_time <= 0:
            raise ConfigError(f"exposure_time must be > 0, got {self.dark.exposure_time}", "dark")
        if not self.events.log_floor > 0:
            raise ConfigError(f"log_floor must be > 0, got {self.events.log_floor}", "events")
        return self

    def to_flat(self) -> Dict[str, Any]:
        flat = {}
        for section, values in asdict(self).items():
            for key, value in values.items():
                flat[f"{section}.{key}"] = list(value) if isinstance(value, tuple) else value
        return flat

    def with_overrides(self, **sections) -> "IspConfig":
        """Copy with per-stage keyword overrides, e.g. with_overrides(dark={"enabled": True})."""
        changed = {name: replace(getattr(self, name), **values) for name, values in sections.items()}
        return replace(self, **changed).validate()


_SECTIONS = {
    "dark": DarkStage, "holes": HoleStage, "demosaic": DemosaicStage, "wb": WbStage,
    "highlight": HighlightStage, "denoise": DenoiseStage, "ccm": CcmStage, "gamma": GammaStage,
    "events": EventsStage,
}

_FIELD_KINDS = {
    "dark.enabled": "bool", "dark.calibration": "path", "dark.exposure_time": "optional_float",
    "holes.guided": "bool",
    "demosaic.margin": "float", "demosaic.event_guided": "bool",
    "wb.enabled": "bool", "wb.mode": "str", "wb.gains": "triplet",
    "highlight.enabled": "bool", "highlight.fraction": "float",
    "denoise.method": "str", "denoise.sigma": "float", "denoise.event_weighted": "bool", "denoise.decay": "float",
    "ccm.mode": "str", "ccm.path": "path", "ccm.reference": "path", "ccm.white_preserve": "bool",
    "ccm.exposure_normalize": "bool", "ccm.window_fraction": "float",
    "gamma.enabled": "bool",
    "events.log_floor": "float",
}

_ALIASES = {"denoise.lambda": "denoise.decay", "demosaic.tau": "demosaic.margin"}


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(key: str, value, base_dir: Optional[Path]):
    kind = _FIELD_KINDS[key]
    stage = key.split(".")[0]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", stage)
        return value
    if kind == "float":
        if not _is_number(value):
            raise ConfigError(f"{key} must be a number, got {value!r}", stage)
        return float(value)
    if kind == "optional_float":
        if value is None:
            return None
        if not _is_number(value):
            raise ConfigError(f"{key} must be a number, got {value!r}", stage)
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}", stage)
        return value.strip().lower()
    if kind == "path":
        if value is None or value == "":
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a path, got {value!r}", stage)
        path = Path(value).expanduser()
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return str(path)
    if kind == "triplet":
        if not (isinstance(value, (list, tuple)) and len(value) == 3 and all(_is_number(v) for v in value)):
            raise ConfigError(f"{key} must be a list of three numbers, got {value!r}", stage)
        return tuple(float(v) for v in value)
    raise ConfigError(f"unsupported field kind for {key}", stage)


def config_from_flat(flat: Dict[str, Any], base_dir: Optional[Path] = None) -> IspConfig:
    """Build a validated IspConfig from dotted keys; unknown keys are rejected."""
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    seen: Dict[str, str] = {}
    for raw_key, value in flat.items():
        key = _ALIASES.get(raw_key.strip(), raw_key.strip())
        section = key.split(".")[0]
        if key not in _FIELD_KINDS:
            raise ConfigError(f"unknown configuration key {raw_key!r}", section if section in _SECTIONS else "config")
        if key in seen:
            raise ConfigError(f"{raw_key!r} and {seen[key]!r} both set {key}", section)
        seen[key] = raw_key
        sections[section][key.split(".", 1)[1]] = _coerce(key, value, base_dir)
    config = IspConfig(**{name: cls(**sections[name]) for name, cls in _SECTIONS.items()})
    return config.validate()


def flatten(tree: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def parse_flat_config(text: str) -> Dict[str, Any]:
    """Parse `key=value` lines; '#' starts a comment line."""
    flat = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {number}: expected key=value, got {stripped!r}", "config")
        key = key.strip()
        if key in flat:
            raise ConfigError(f"line {number}: duplicate key {key!r}", "config")
        try:
            flat[key] = yaml.safe_load(value.strip()) if value.strip() else None
        except yaml.YAMLError as e:
            raise ConfigError(f"line {number}: cannot parse value for {key!r}", "config") from e
    return flat


def load_isp_config(path: Union[str, Path]) -> IspConfig:
    """Load a YAML or flat dotted configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}", "config") from e

    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})", "config") from e
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping", "config")
        flat = flatten(tree)
    else:
        flat = parse_flat_config(text)

    config = config_from_flat(flat, base_dir=path.parent.resolve())
    logger.debug(f"Loaded ISP config from {path}")
    return config


def dump_flat_config(config: IspConfig) -> str:
    lines = []
    for key, value in config.to_flat().items():
        if value is None:
            continue
        lines.append(f"{key}={yaml.safe_dump(value, default_flow_style=True).strip().removesuffix('...').strip()}")
    return "\n".join(lines) + "\n"
