"""JSON run-configuration document.

Top-level keys (all optional)::

    {
      "seed": 0,
      "lab": {...LabConfig fields...},
      "coffee_shop": {...CoffeeShopConfig fields...},
      "matrix": {"sdrs": ["b210", "hackrf"]}
    }

Unknown keys are rejected so typos surface as validation errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .harness import CoffeeShopConfig, LabConfig
from .sigmodel import SDR_PROFILES

_TOP_KEYS = {"seed", "lab", "coffee_shop", "matrix"}
_MATRIX_KEYS = {"sdrs"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    lab: LabConfig = field(default_factory=LabConfig)
    coffee_shop: CoffeeShopConfig = field(default_factory=CoffeeShopConfig)
    matrix_sdrs: list = field(default_factory=lambda: ["b210", "hackrf"])

    def lab_config(self) -> LabConfig:
        return dataclasses.replace(self.lab, seed=self.seed)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "lab": self.lab.to_dict(), "coffee_shop": dataclasses.asdict(self.coffee_shop),
                "matrix": {"sdrs": list(self.matrix_sdrs)}}


def _fields(cls, d: dict, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    try:
        lab = LabConfig(**_fields(LabConfig, d.get("lab", {}), "lab"))
        cs = dict(_fields(CoffeeShopConfig, d.get("coffee_shop", {}), "coffee_shop"))
        if "snr_range" in cs:
            cs["snr_range"] = tuple(cs["snr_range"])
        coffee = CoffeeShopConfig(**cs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    matrix = d.get("matrix", {})
    if not isinstance(matrix, dict) or set(matrix) - _MATRIX_KEYS:
        raise ConfigError(f"matrix section accepts only {sorted(_MATRIX_KEYS)}")
    sdrs = list(matrix.get("sdrs", ["b210", "hackrf"]))
    for name in sdrs:
        if name not in SDR_PROFILES:
            raise ConfigError(f"unknown SDR profile {name!r}; choose from {sorted(SDR_PROFILES)}")
    return RunConfig(seed, lab, coffee, sdrs)


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(d)
