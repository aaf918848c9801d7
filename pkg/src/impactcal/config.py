"""Run configuration: one flat record loaded from a sectioned TOML file."""
from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
_HHMM = re.compile(r"^([01]\d|2[0-3]):[0-5]\d$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # clock
    window_unit_minutes: float = 15.0
    session: tuple = ("09:30-11:30", "13:00-15:00")
    # taq
    ts_tolerance_ms: int = 0
    min_valid_days: int = 1250
    # features
    t_post_units: float = 1.0
    sigma_floor: float = 1e-6
    # model
    gtol: float = 1e-7
    max_iter: int = 1000
    min_windows: int = 100
    # assess
    re_min_groups: int = 10
    re_min_windows: int = 1000
    # sim
    alpha: float = 0.7
    beta: float = 0.7
    gamma: float = 4.5
    eta: float = 0.05
    sigma_schedule: tuple = (0.01, 0.02, 0.03, 0.04)
    v_low: float = 0.01
    v_high: float = 0.5
    n_windows: int = 1000
    n_instruments: int = 1
    volume: float = 1e6
    output: str = "ticks"
    ticks_per_window: int = 50
    trade_size: float = 100.0
    s0: float = 10.0
    start_date: str = "20240102"
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                raise ConfigError(f"{f.name} must not be a boolean")
            if f.name in ("ts_tolerance_ms", "seed"):
                if not (isinstance(val, int) and val >= 0):
                    raise ConfigError(f"{f.name} must be a non-negative integer")
            elif isinstance(val, (int, float)):
                if not (math.isfinite(val) and val > 0):
                    raise ConfigError(f"{f.name} must be positive")
            elif f.name == "sigma_schedule":
                if not val or any(not (isinstance(s, (int, float)) and s > 0) for s in val):
                    raise ConfigError("sigma_schedule must be a non-empty list of positive numbers")
        if self.output not in ("ticks", "windows"):
            raise ConfigError("output must be 'ticks' or 'windows'")
        if not self.v_low <= self.v_high <= 1:
            raise ConfigError("need v_low <= v_high <= 1")
        self.session_pairs()

    def session_pairs(self) -> tuple:
        out = []
        for seg in self.session:
            try:
                a, b = seg.split("-")
            except (AttributeError, ValueError):
                raise ConfigError(f"session segment {seg!r} is not HH:MM-HH:MM") from None
            a, b = a.strip(), b.strip()
            if not (_HHMM.match(a) and _HHMM.match(b)) or not a < b:
                raise ConfigError(f"session segment {seg!r} is not an increasing HH:MM-HH:MM pair")
            out.append((a, b))
        if not out:
            raise ConfigError("session needs at least one segment")
        return tuple(out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["session"] = list(self.session)
        d["sigma_schedule"] = list(self.sigma_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in ("session", "sigma_schedule"):
                if not isinstance(v, (list, tuple)):
                    raise ConfigError(f"{k} must be a list")
                v = tuple(float(x) for x in v) if k == "sigma_schedule" else tuple(v)
            elif isinstance(known[k].default, float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            elif type(known[k].default) is not type(v):
                raise ConfigError(f"{k} must be of type {type(known[k].default).__name__}")
            kw[k] = v
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings, values in TOML syntax."""
        d = self.to_dict()
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, _, raw = item.partition("=")
            try:
                val = tomllib.loads(f"x = {raw}")["x"]
            except tomllib.TOMLDecodeError:
                val = raw  # bare strings
            d[key.strip()] = val
        return RunConfig.from_dict(d)


SECTIONS = {
    "clock": ("window_unit_minutes", "session"),
    "taq": ("ts_tolerance_ms", "min_valid_days"),
    "features": ("t_post_units", "sigma_floor"),
    "model": ("gtol", "max_iter", "min_windows"),
    "assess": ("re_min_groups", "re_min_windows"),
    "sim": ("alpha", "beta", "gamma", "eta", "sigma_schedule", "v_low", "v_high", "n_windows",
            "n_instruments", "volume", "output", "ticks_per_window", "trade_size", "s0", "start_date"),
    "run": ("seed",),
}


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    flat = {}
    for key, val in doc.items():
        if isinstance(val, dict):
            allowed = SECTIONS.get(key)
            if allowed is None:
                raise ConfigError(f"unknown config section [{key}]")
            for k, v in val.items():
                if k not in allowed:
                    raise ConfigError(f"unknown key {k!r} in section [{key}]")
                flat[k] = v
        else:
            flat[key] = val
    return RunConfig.from_dict(flat)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def envelope(kind: str, result, config: RunConfig) -> dict:
    """Output document with schema version and the effective config."""
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "result": result,
    }


def dump_json(doc: dict) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
