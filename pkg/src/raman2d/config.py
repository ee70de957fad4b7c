"""Key-value text configuration for the fiber, pumps and grids.

One ``key = value`` per line; ``#`` starts a comment. Vector values are
comma separated. Recognised keys (all optional, defaults in brackets)::

    length_km               span length [50]
    alpha_signal_db_km      signal attenuation [0.2]
    alpha_pump_db_km        pump attenuation [0.25]
    raman_peak_efficiency   peak Raman efficiency, 1/(W km) [calibrated]
    raman_peak_shift_thz    frequency shift of the Raman peak [13.2]
    launch_power_dbm        signal power per channel at z = 0 [-16]
    channel_start_thz       first channel frequency [191.8]
    channel_spacing_thz     channel spacing [0.1]
    pump_freqs_thz          four pump frequencies, p1..p4 [210.4, 209.4, 206.3, 205.0]
    pump_max_dbm            four per-pump maxima [20, 20, 20, 19.94]
    step_km                 integrator step [0.1]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .sim import (DEFAULT_PUMP_FREQS, DEFAULT_PUMP_MAX, DistanceGrid, FiberParams,
                  FrequencyGrid, Grids, P_MIN_DBM, PumpConfig, simulator)


class ConfigError(ValueError):
    pass


_SCALARS = {
    "length_km": ("fiber", "length"),
    "alpha_signal_db_km": ("fiber", "alpha_signal"),
    "alpha_pump_db_km": ("fiber", "alpha_pump"),
    "raman_peak_efficiency": ("fiber", "raman_peak_efficiency"),
    "raman_peak_shift_thz": ("fiber", "raman_peak_shift"),
    "launch_power_dbm": ("fiber", "launch_power_per_channel"),
    "channel_start_thz": ("grid", "start"),
    "channel_spacing_thz": ("grid", "spacing"),
    "step_km": ("top", "step_km"),
}
_VECTORS = {"pump_freqs_thz": "pump_freqs", "pump_max_dbm": "pump_max"}


@dataclass(frozen=True)
class SimConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    grids: Grids = field(default_factory=Grids)
    pump_freqs: tuple = DEFAULT_PUMP_FREQS
    pump_max: tuple = DEFAULT_PUMP_MAX
    step_km: float = 0.1

    def evaluator(self):
        return simulator(self.fiber, self.grids, self.pump_freqs, self.step_km)

    def pump_config(self, powers) -> PumpConfig:
        return PumpConfig(tuple(powers), self.pump_freqs, self.pump_max)

    def as_dict(self) -> dict:
        return {"fiber": asdict(self.fiber), "channel_start_thz": self.grids.freq.start,
                "channel_spacing_thz": self.grids.freq.spacing, "pump_freqs_thz": list(self.pump_freqs),
                "pump_max_dbm": list(self.pump_max), "step_km": self.step_km}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        f = self.fiber
        lines = [
            f"length_km = {f.length!r}", f"alpha_signal_db_km = {f.alpha_signal!r}",
            f"alpha_pump_db_km = {f.alpha_pump!r}", f"raman_peak_efficiency = {f.raman_peak_efficiency!r}",
            f"raman_peak_shift_thz = {f.raman_peak_shift!r}", f"launch_power_dbm = {f.launch_power_per_channel!r}",
            f"channel_start_thz = {self.grids.freq.start!r}", f"channel_spacing_thz = {self.grids.freq.spacing!r}",
            "pump_freqs_thz = " + ", ".join(repr(x) for x in self.pump_freqs),
            "pump_max_dbm = " + ", ".join(repr(x) for x in self.pump_max),
            f"step_km = {self.step_km!r}",
        ]
        return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    fiber_kw, grid_kw, top = {}, {}, {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in lines:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}' (first on line {lines[key]})")
        lines[key] = lineno
        try:
            if key in _SCALARS:
                group, name = _SCALARS[key]
                {"fiber": fiber_kw, "grid": grid_kw, "top": top}[group][name] = float(value)
            elif key in _VECTORS:
                vec = tuple(float(v) for v in value.split(","))
                if len(vec) != 4:
                    raise ConfigError(f"{source}:{lineno}: '{key}' needs 4 values, got {len(vec)}")
                top[_VECTORS[key]] = vec
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: invalid value for '{key}': {value!r}") from None
    try:
        fiber = FiberParams(**fiber_kw)
        grids = Grids(FrequencyGrid(**grid_kw), DistanceGrid(fiber.length))
        cfg = SimConfig(fiber, grids, **top)
        PumpConfig(tuple(P_MIN_DBM for _ in range(4)), cfg.pump_freqs, cfg.pump_max)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if cfg.step_km <= 0:
        raise ConfigError(f"{source}:{lines.get('step_km', 0)}: step_km must be positive")
    return cfg


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
