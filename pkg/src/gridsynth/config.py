"""Tunables for the whole build, with a small key=value file format.

A config file holds one `key = value` pair per line; `#` starts a comment
and blank lines are skipped. Command-line flags override file values, which
override the defaults below.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ValidationError
from .mapping import (
    DEFAULT_MAX_MAPPING_M,
    DEFAULT_PADDING_M,
    DEFAULT_RESIDENCES_PER_TRANSFORMER,
    DEFAULT_SPACING_M,
)
from .partition import DEFAULT_MAX_NODES
from .primary import (
    DEFAULT_FEEDER_CAP_KW,
    DEFAULT_PRIMARY_CAP_KW,
    DEFAULT_PRIMARY_RHO_OHM_PER_KM,
    DEFAULT_PRIMARY_V_BASE_V,
    DEFAULT_S_BASE_KVA,
    DEFAULT_SECONDARY_RHO_OHM_PER_KM,
    DEFAULT_SECONDARY_V_BASE_V,
    DEFAULT_V_MAX_PU,
    DEFAULT_V_MIN_PU,
)
from .secondary import DEFAULT_LAMBDA_M, DEFAULT_SECONDARY_CAP_KW


@dataclass(frozen=True)
class Config:
    seed: int = 0
    padding_m: float = DEFAULT_PADDING_M
    max_mapping_m: float = DEFAULT_MAX_MAPPING_M
    spacing_m: float = DEFAULT_SPACING_M
    residences_per_transformer: int = DEFAULT_RESIDENCES_PER_TRANSFORMER
    lambda_m: float = DEFAULT_LAMBDA_M
    secondary_cap_kw: float = DEFAULT_SECONDARY_CAP_KW
    primary_cap_kw: float = DEFAULT_PRIMARY_CAP_KW
    feeder_cap_kw: float = DEFAULT_FEEDER_CAP_KW
    v_min: float = DEFAULT_V_MIN_PU
    v_max: float = DEFAULT_V_MAX_PU
    max_nodes: int = DEFAULT_MAX_NODES
    max_load_kw: float | None = None
    rho_primary_ohm_per_km: float = DEFAULT_PRIMARY_RHO_OHM_PER_KM
    rho_secondary_ohm_per_km: float = DEFAULT_SECONDARY_RHO_OHM_PER_KM
    primary_v_base_v: float = DEFAULT_PRIMARY_V_BASE_V
    secondary_v_base_v: float = DEFAULT_SECONDARY_V_BASE_V
    s_base_kva: float = DEFAULT_S_BASE_KVA
    node_limit: int = 1_000_000

    def __post_init__(self) -> None:
        positive = (
            "padding_m",
            "max_mapping_m",
            "spacing_m",
            "residences_per_transformer",
            "lambda_m",
            "secondary_cap_kw",
            "primary_cap_kw",
            "feeder_cap_kw",
            "max_nodes",
            "rho_primary_ohm_per_km",
            "rho_secondary_ohm_per_km",
            "primary_v_base_v",
            "secondary_v_base_v",
            "s_base_kva",
            "node_limit",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"config: {name} must be positive")
        if self.max_load_kw is not None and self.max_load_kw <= 0:
            raise ValidationError("config: max_load_kw must be positive when set")
        if not (0.0 < self.v_min < 1.0 <= self.v_max):
            raise ValidationError("config: need 0 < v_min < 1 <= v_max")


_INT_FIELDS = {"seed", "residences_per_transformer", "max_nodes", "node_limit"}
_OPTIONAL_FIELDS = {"max_load_kw"}
_ALL_FIELDS = {f.name for f in fields(Config)}


def _coerce(key: str, raw: str, where: str):
    if key in _OPTIONAL_FIELDS and raw.lower() in ("none", ""):
        return None
    try:
        return int(raw) if key in _INT_FIELDS else float(raw)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {key}={raw!r}") from None


def load_config(path: str | Path) -> Config:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such config file: {p}")
    values: dict[str, object] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ValidationError(f"{p}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in text.split("=", 1))
        raw = raw.strip("\"'")
        if key not in _ALL_FIELDS:
            raise ValidationError(f"{p}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ValidationError(f"{p}:{lineno}: duplicate config key {key!r}")
        values[key] = _coerce(key, raw, f"{p}:{lineno}")
    return Config(**values)


def apply_overrides(config: Config, **overrides) -> Config:
    """New Config with the non-None overrides applied; flags win this way."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(changes) - _ALL_FIELDS
    if unknown:
        raise ValidationError(f"unknown config overrides: {sorted(unknown)}")
    return replace(config, **changes) if changes else config
