"""INI configuration: scenario parameters plus experiment defaults.

All dB/dBm quantities stay in their dB form inside the file and the
ScenarioConfig; conversion to watts and linear ratios happens through the
config properties, never inside solvers.
"""

import configparser
from dataclasses import dataclass, fields

from .channel import ScenarioConfig
from .errors import ConfigError

_INT_FIELDS = {"m0", "m1", "n0", "n1", "taps", "seed"}
_SECTIONS = ("scenario", "experiment")


@dataclass(frozen=True)
class Settings:
    """Validated scenario parameters and experiment-scale defaults."""

    scenario: ScenarioConfig
    trials: int = 1000
    error_draws: int = 10_000


def _parse_scalar(section, key, raw, want_int):
    try:
        return int(raw) if want_int else float(raw)
    except ValueError:
        kind = "an integer" if want_int else "a number"
        raise ConfigError(
            f"[{section}] {key} must be {kind}, got {raw!r}") from None


def load_config(path):
    """Read and validate an INI file into Settings."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        loaded = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    if not loaded:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")

    known = {f.name for f in fields(ScenarioConfig)}
    kwargs = {}
    if parser.has_section("scenario"):
        for key, raw in parser.items("scenario"):
            if key not in known:
                raise ConfigError(f"unknown [scenario] key {key!r}")
            kwargs[key] = _parse_scalar("scenario", key, raw,
                                        key in _INT_FIELDS)
    scenario = ScenarioConfig(**kwargs).validate()

    trials, error_draws = 1000, 10_000
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key == "trials":
                trials = _parse_scalar("experiment", key, raw, True)
            elif key == "error_draws":
                error_draws = _parse_scalar("experiment", key, raw, True)
            else:
                raise ConfigError(f"unknown [experiment] key {key!r}")
    if trials < 1:
        raise ConfigError("[experiment] trials must be >= 1")
    if error_draws < 1:
        raise ConfigError("[experiment] error_draws must be >= 1")
    return Settings(scenario=scenario, trials=trials, error_draws=error_draws)
