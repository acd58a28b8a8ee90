"""Scenario configuration and its JSON loader.

The field names accepted in a scenario file are listed in
``docs/schemas.md``. Unknown keys are rejected so that typos surface as
errors instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Invalid configuration value; ``field_path`` names the offending key."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Indoor THz scenario: carrier, arrays, IRS layout and random placement.

    Positions are in meters on a 2-D floor plan. BS and user arrays lie along
    the x axis; IRS arrays lie along the wall ``x = irs_x``. IRS ``i``
    (1-based, over all users) sits at ``(irs_x, irs_y0 + i)``; user ``k`` is
    served by the IRS block ``k*irs_per_user .. (k+1)*irs_per_user - 1``.
    """

    frequency: float = 0.14e12
    absorption: float = 1.83e-5
    noise_power_dbm: float = -85.0
    num_users: int = 3
    irs_per_user: int = 2
    bs_elements: int = 32
    user_elements: int = 32
    irs_elements: int = 32
    spacing: float = 0.5
    beta: float = 0.8
    # float, or "computed" to use compensation_factor()
    eta: float | str = 1.0
    irs_element_side: float | None = None
    irs_element_gain: float = math.sqrt(2.0)
    # dB; None selects 4 + 10*log10(sqrt(N_a)) per side
    antenna_gain_db: float | None = None
    bs_x: tuple[float, float] = (0.0, 0.0)
    bs_y: tuple[float, float] = (0.0, 4.0)
    user_x: tuple[float, float] = (0.0, 3.0)
    user_y: tuple[float, float] = (4.0, 10.0)
    irs_x: float = 4.0
    irs_y0: float = 2.0
    wall_attenuation_db: tuple[float, float] = (5.8, 19.3)
    seed: int = 0

    def __post_init__(self):
        _check(self.frequency > 0, "frequency", "must be positive")
        _check(self.absorption >= 0, "absorption", "must be nonnegative")
        _check(_is_int(self.num_users) and self.num_users >= 1,
               "num_users", "must be an integer >= 1")
        _check(_is_int(self.irs_per_user) and self.irs_per_user >= 0,
               "irs_per_user", "must be an integer >= 0")
        for name in ("bs_elements", "user_elements", "irs_elements"):
            value = getattr(self, name)
            _check(_is_int(value) and value >= 1, name, "must be an integer >= 1")
        _check(self.spacing > 0, "spacing", "must be positive")
        _check(0.0 <= self.beta <= 1.0, "beta", "must lie in [0, 1]")
        if isinstance(self.eta, str):
            _check(self.eta == "computed", "eta", "must be a number or 'computed'")
        else:
            _check(self.eta >= 0, "eta", "must be nonnegative")
        for name in ("bs_x", "bs_y", "user_x", "user_y", "wall_attenuation_db"):
            lo, hi = getattr(self, name)
            _check(lo <= hi, name, "range must satisfy low <= high")
        _check(_is_int(self.seed), "seed", "must be an integer")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    @property
    def noise_power(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    @property
    def num_irs(self) -> int:
        return self.num_users * self.irs_per_user

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], prefix: str = "scenario") -> "ScenarioConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            path = f"{prefix}.{key}"
            if key not in known:
                raise ConfigError(path, "unknown key")
            kwargs[key] = _coerce(key, value, path)
        try:
            return cls(**kwargs)
        except ConfigError as err:
            raise ConfigError(f"{prefix}.{err.field_path}", err.message) from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_TUPLE_FIELDS = {"bs_x", "bs_y", "user_x", "user_y", "wall_attenuation_db"}
_INT_FIELDS = {"num_users", "irs_per_user", "bs_elements", "user_elements",
               "irs_elements", "seed"}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check(ok: bool, field_path: str, message: str):
    if not ok:
        raise ConfigError(field_path, message)


def _coerce(key: str, value: Any, path: str) -> Any:
    if key in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(path, "expected a two-element list")
        try:
            return (float(value[0]), float(value[1]))
        except (TypeError, ValueError):
            raise ConfigError(path, "expected numbers") from None
    if key in _INT_FIELDS:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not _is_int(value):
            raise ConfigError(path, "expected an integer")
        return value
    if key == "eta":
        if value == "computed":
            return value
    if key in ("irs_element_side", "antenna_gain_db") and value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "expected a number")
    return float(value)


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_scenario(path: str | Path | None = None,
                  overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError("config", f"invalid JSON: {err}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        if "scenario" in data and isinstance(data["scenario"], dict):
            data = dict(data["scenario"])
    data.update(overrides or {})
    return ScenarioConfig.from_dict(data)


def single_user(cfg: ScenarioConfig | None = None, **changes) -> ScenarioConfig:
    """Single-user layout: one user served by all six wall IRSs."""
    cfg = cfg or ScenarioConfig()
    return cfg.replace(**{"num_users": 1, "irs_per_user": 6, **changes})


def multi_user(cfg: ScenarioConfig | None = None, **changes) -> ScenarioConfig:
    """Three users, two IRSs each."""
    cfg = cfg or ScenarioConfig()
    return cfg.replace(**{"num_users": 3, "irs_per_user": 2, **changes})


__all__ = [
    "SPEED_OF_LIGHT", "ConfigError", "ScenarioConfig", "dbm_to_watts",
    "watts_to_dbm", "load_scenario", "parse_override", "single_user",
    "multi_user",
]
