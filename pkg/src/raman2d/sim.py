"""Steady-state simulator for a counter-pumped distributed Raman amplifier.

Powers are carried in watts internally and reported in dBm. The signal comb
is launched at ``z = 0``; the pumps are injected at ``z = L`` and travel
towards ``z = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

N_CHANNELS = 44
N_DISTANCES = 100

#: Pump frequencies in THz, p1..p4 (strictly decreasing).
DEFAULT_PUMP_FREQS = (210.4, 209.4, 206.3, 205.0)
#: Per-pump maximum available power in dBm.
DEFAULT_PUMP_MAX = (20.0, 20.0, 20.0, 19.94)
#: Lowest controllable pump setting in dBm.
P_MIN_DBM = -5.0
PUMP_BAND = (203.9, 211.1)
SIGNAL_BAND = (191.8, 196.2)

#: Peak Raman efficiency fixed by :func:`calibrate_peak_efficiency`
#: so that all pumps at DEFAULT_PUMP_MAX give a 4.9 dB peak on-off gain.
CALIBRATED_PEAK_EFFICIENCY = 0.2465169590621677

RAMAN_PEAK_SHIFT = 13.2
RAMAN_CUTOFF_SHIFT = 15.0


class NumericalInstabilityError(ArithmeticError):
    """Raised when the integrator produces a non-finite power."""


class GridMismatchError(ValueError):
    pass


def dbm_to_mw(p):
    """Convert dBm to mW. ``-inf`` maps to 0 mW (pump OFF)."""
    return np.power(10.0, np.asarray(p, dtype=float) / 10.0)


def mw_to_dbm(p):
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("mw_to_dbm requires finite, strictly positive power")
    return 10.0 * np.log10(p)


@dataclass(frozen=True)
class FrequencyGrid:
    """Signal channel frequencies in THz, ``f_i = start + spacing * i``."""

    start: float = 191.8
    spacing: float = 0.1
    count: int = N_CHANNELS

    def __post_init__(self):
        if self.count != N_CHANNELS:
            raise ValueError(f"frequency grid must have {N_CHANNELS} channels")
        if not self.spacing > 0:
            raise ValueError("channel spacing must be positive")
        f = self.channel_freqs
        if f[0] < SIGNAL_BAND[0] - 1e-9 or f[-1] > SIGNAL_BAND[1] + 1e-9:
            raise ValueError("channels must lie within 191.8-196.2 THz")

    @property
    def channel_freqs(self) -> np.ndarray:
        return self.start + self.spacing * np.arange(self.count)


@dataclass(frozen=True)
class DistanceGrid:
    """Sample positions ``z_k = spacing * (k + 1)`` km, so the last point is L."""

    length: float = 50.0
    count: int = N_DISTANCES

    def __post_init__(self):
        if self.count != N_DISTANCES:
            raise ValueError(f"distance grid must have {N_DISTANCES} points")
        if not self.length > 0:
            raise ValueError("span length must be positive")

    @property
    def spacing(self) -> float:
        return self.length / self.count

    @property
    def points(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.count + 1)


@dataclass(frozen=True)
class Grids:
    freq: FrequencyGrid = field(default_factory=FrequencyGrid)
    dist: DistanceGrid = field(default_factory=DistanceGrid)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.freq.count, self.dist.count)


@dataclass(frozen=True)
class FiberParams:
    length: float = 50.0  # km
    alpha_signal: float = 0.2  # dB/km
    alpha_pump: float = 0.25  # dB/km
    raman_peak_efficiency: float = CALIBRATED_PEAK_EFFICIENCY  # 1/(W km)
    raman_peak_shift: float = RAMAN_PEAK_SHIFT  # THz
    launch_power_per_channel: float = -16.0  # dBm

    def __post_init__(self):
        for name in ("length", "alpha_signal", "alpha_pump",
                     "raman_peak_efficiency", "raman_peak_shift"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.raman_peak_shift < RAMAN_CUTOFF_SHIFT:
            raise ValueError("raman_peak_shift must be below the 15 THz cutoff")
        if not np.isfinite(self.launch_power_per_channel):
            raise ValueError("launch power must be finite")


@dataclass(frozen=True)
class PumpConfig:
    """Pump frequencies (THz) and powers (dBm at z = L). ``-inf`` dBm is OFF."""

    powers: tuple[float, ...]
    freqs: tuple[float, ...] = DEFAULT_PUMP_FREQS
    max_powers: tuple[float, ...] = DEFAULT_PUMP_MAX

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        object.__setattr__(self, "max_powers", tuple(float(p) for p in self.max_powers))
        if not len(self.powers) == len(self.freqs) == len(self.max_powers) == 4:
            raise ValueError("exactly four pumps are required")
        f = np.array(self.freqs)
        if np.any(f < PUMP_BAND[0]) or np.any(f > PUMP_BAND[1]):
            raise ValueError("pump frequencies must lie within 203.9-211.1 THz")
        if np.any(np.diff(f) >= 0):
            raise ValueError("pump frequencies must be strictly decreasing p1..p4")
        for i, (p, pmax) in enumerate(zip(self.powers, self.max_powers)):
            if p == -np.inf:
                continue
            if not (P_MIN_DBM - 1e-9 <= p <= pmax + 1e-9):
                raise ValueError(
                    f"pump {i + 1} power {p} dBm outside [{P_MIN_DBM}, {pmax}] dBm")

    @classmethod
    def off(cls, **kwargs) -> "PumpConfig":
        return cls(powers=(-np.inf,) * 4, **kwargs)

    @classmethod
    def at_max(cls, **kwargs) -> "PumpConfig":
        max_powers = kwargs.get("max_powers", DEFAULT_PUMP_MAX)
        return cls(powers=tuple(max_powers), **kwargs)


@dataclass(frozen=True)
class PowerProfile2D:
    """Signal power in dBm, shape (44, 100): rows are channels, columns distances."""

    values: np.ndarray
    grids: Grids = field(default_factory=Grids)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grids.shape:
            raise GridMismatchError(
                f"profile shape {v.shape} does not match grid {self.grids.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("profile contains non-finite values")
        object.__setattr__(self, "values", v)

    def to_csv(self, path) -> None:
        write_profile_csv(path, self.values, self.grids)


@dataclass(frozen=True)
class GainSpectrum:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_CHANNELS,) or not np.all(np.isfinite(v)):
            raise ValueError("gain spectrum must be 44 finite values")
        object.__setattr__(self, "values", v)


def raman_gain_efficiency(delta_f, fiber: FiberParams = FiberParams()):
    """Triangular Raman gain efficiency in 1/(W km).

    Zero for ``delta_f <= 0``, rising linearly to the peak efficiency at the
    peak shift, falling linearly to zero at 15 THz and zero beyond.
    """
    d = np.asarray(delta_f, dtype=float)
    peak, shift = fiber.raman_peak_efficiency, fiber.raman_peak_shift
    rise = d / shift
    fall = (RAMAN_CUTOFF_SHIFT - d) / (RAMAN_CUTOFF_SHIFT - shift)
    shape = np.where(d <= shift, rise, fall)
    return peak * np.clip(shape, 0.0, None) * (d > 0) * (d < RAMAN_CUTOFF_SHIFT)


def coupling_matrix(freqs, fiber: FiberParams = FiberParams()) -> np.ndarray:
    """Raman coupling ``G[i, j]`` so that wave i gains ``P_i * sum_j G[i, j] P_j``.

    Positive when wave j has the higher frequency (wave i is amplified);
    negative with the photon-energy ratio when wave i is the higher one.
    """
    f = np.asarray(freqs, dtype=float)
    df = f[None, :] - f[:, None]  # f_j - f_i
    cr = raman_gain_efficiency(np.abs(df), fiber)
    ratio = np.where(f[:, None] > f[None, :], f[:, None] / f[None, :], 1.0)
    return cr * np.sign(df) * ratio


def raman_rhs(powers, coupling, alpha, direction):
    """Coupled-wave derivative dP/dz.

    ``powers`` has shape (..., n) in W, ``alpha`` is in 1/km (linear),
    ``direction`` is +1 for waves travelling towards +z and -1 otherwise.
    """
    local = -alpha * powers + powers * (powers @ coupling.T)
    return direction * local


def rk4_integrate(rhs: Callable, y0, z0: float, z1: float, n_steps: int) -> np.ndarray:
    """Fixed-step classical Runge-Kutta. Returns states at all n_steps + 1 nodes."""
    h = (z1 - z0) / n_steps
    y = np.asarray(y0, dtype=float)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    z = z0
    for k in range(n_steps):
        k1 = rhs(z, y)
        k2 = rhs(z + h / 2, y + h / 2 * k1)
        k3 = rhs(z + h / 2, y + h / 2 * k2)
        k4 = rhs(z + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalInstabilityError(
                f"non-finite power at z = {z + h:.4f} km with step {abs(h):g} km")
        out[k + 1] = y
        z = z0 + (k + 1) * h
    return out


def _db_per_km_to_linear(alpha_db):
    return alpha_db * np.log(10.0) / 10.0


def propagate_fine(pump_dbm, fiber: FiberParams = FiberParams(),
                   grid: FrequencyGrid = FrequencyGrid(),
                   pump_freqs=DEFAULT_PUMP_FREQS, n_steps: int = 500):
    """Signal power (dBm) on every integrator node.

    ``pump_dbm`` may be a single 4-vector or a batch of shape (B, 4).
    Returns ``(z, profile)`` with ``z`` of shape (n_steps + 1,) from 0 to L
    and ``profile`` of shape ([B,] 44, n_steps + 1).

    The pumps are integrated backwards from z = L together with their
    running integral Q_j(z) = int_z^L P_j. Signals do not act back on the
    pumps, so their forward solution through the frozen pump field is
    ln P_s(z) = ln P_s(0) - alpha_s z + sum_j G_sj (Q_j(0) - Q_j(z)).
    """
    pump_dbm = np.asarray(pump_dbm, dtype=float)
    single = pump_dbm.ndim == 1
    pumps_w = np.atleast_2d(dbm_to_mw(pump_dbm)) * 1e-3
    if pumps_w.shape[-1] != len(pump_freqs):
        raise ValueError("pump power vector length does not match pump frequencies")
    n_pumps = pumps_w.shape[-1]

    sig_f = grid.channel_freqs
    all_f = np.concatenate([sig_f, np.asarray(pump_freqs, dtype=float)])
    g_full = coupling_matrix(all_f, fiber)
    g_pp = g_full[N_CHANNELS:, N_CHANNELS:]
    g_sp = g_full[:N_CHANNELS, N_CHANNELS:]
    alpha_p = _db_per_km_to_linear(fiber.alpha_pump)

    def rhs(z, y):
        p = y[..., :n_pumps]
        dp = raman_rhs(p, g_pp, alpha_p, -1.0)
        return np.concatenate([dp, -p], axis=-1)

    y0 = np.concatenate([pumps_w, np.zeros_like(pumps_w)], axis=-1)
    states = rk4_integrate(rhs, y0, fiber.length, 0.0, n_steps)[::-1]
    q = states[..., n_pumps:]  # (n+1, B, 4), node 0 is z = 0
    z = np.linspace(0.0, fiber.length, n_steps + 1)

    acc = (q[0][None] - q) @ g_sp.T  # (n+1, B, 44) nepers
    db = (fiber.launch_power_per_channel - fiber.alpha_signal * z[:, None, None]
          + 10.0 / np.log(10.0) * acc)
    if not np.all(np.isfinite(db)):
        raise NumericalInstabilityError(
            f"non-finite signal power with step {fiber.length / n_steps:g} km")
    profile = np.transpose(db, (1, 2, 0))  # (B, 44, n+1)
    return z, (profile[0] if single else profile)


def propagate_batch(pump_dbm, fiber: FiberParams = FiberParams(),
                    grids: Grids = Grids(), pump_freqs=DEFAULT_PUMP_FREQS,
                    step_km: float = 0.1) -> np.ndarray:
    """Profiles on the 44x100 grid for a batch of pump vectors, shape (B, 44, 100)."""
    if not np.isclose(grids.dist.length, fiber.length):
        raise GridMismatchError("distance grid length differs from fiber length")
    n_steps = int(round(fiber.length / step_km))
    per_sample = n_steps / grids.dist.count
    if not np.isclose(per_sample, round(per_sample)) or per_sample < 1:
        raise ValueError(
            f"step {step_km} km does not divide the {grids.dist.spacing} km grid")
    per_sample = int(round(per_sample))
    _, fine = propagate_fine(np.atleast_2d(pump_dbm), fiber, grids.freq,
                             pump_freqs, n_steps)
    return fine[..., per_sample::per_sample]


def propagate(pumps: PumpConfig, fiber: FiberParams = FiberParams(),
              grids: Grids = Grids(), step_km: float = 0.1) -> PowerProfile2D:
    """Simulate the 44x100 signal power profile for one pump configuration."""
    values = propagate_batch(np.array(pumps.powers), fiber, grids,
                             pumps.freqs, step_km)[0]
    return PowerProfile2D(values, grids)


def on_off_gain(on: PowerProfile2D, off: PowerProfile2D) -> GainSpectrum:
    """Span-end gain of ``on`` relative to the pumps-off profile ``off``, in dB."""
    if on.grids != off.grids:
        raise GridMismatchError("on and off profiles are on different grids")
    return GainSpectrum(on.values[:, -1] - off.values[:, -1])


def max_on_off_gain(fiber: FiberParams = FiberParams(), grids: Grids = Grids(),
                    pump_max=DEFAULT_PUMP_MAX, pump_freqs=DEFAULT_PUMP_FREQS) -> float:
    on = propagate_batch(np.array(pump_max), fiber, grids, pump_freqs)[0]
    off = propagate_batch(np.full(4, -np.inf), fiber, grids, pump_freqs)[0]
    return float(np.max(on[:, -1] - off[:, -1]))


def calibrate_peak_efficiency(target_gain_db: float = 4.9,
                              fiber: FiberParams = FiberParams(),
                              grids: Grids = Grids(),
                              pump_max=DEFAULT_PUMP_MAX,
                              pump_freqs=DEFAULT_PUMP_FREQS,
                              bracket=(0.05, 2.0)) -> float:
    """Peak Raman efficiency giving ``target_gain_db`` maximum on-off gain.

    One-time procedure: all pumps at their maximum power, root-find the
    peak efficiency on the span-end on-off gain maximum over channels.
    """
    from dataclasses import replace
    from scipy.optimize import brentq

    def excess(c):
        f = replace(fiber, raman_peak_efficiency=c)
        return max_on_off_gain(f, grids, pump_max, pump_freqs) - target_gain_db

    return float(brentq(excess, *bracket, xtol=1e-10))


def write_profile_csv(path, values, grids: Grids = Grids()) -> None:
    """CSV with a header row of distances (km) and a first column of frequencies (THz)."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write("freq_thz\\z_km," + ",".join(f"{z:.6g}" for z in grids.dist.points) + "\n")
        for f, row in zip(grids.freq.channel_freqs, values):
            fh.write(f"{f:.6g}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_profile_csv(path, grids: Grids = Grids()) -> PowerProfile2D:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        z = np.array([float(t) for t in lines[0].split(",")[1:]])
        rows = [ln.split(",") for ln in lines[1:]]
        f = np.array([float(r[0]) for r in rows])
        values = np.array([[float(t) for t in r[1:]] for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed profile CSV ({exc})") from None
    if values.shape != grids.shape:
        raise GridMismatchError(f"{path}: profile shape {values.shape}, expected {grids.shape}")
    if not (np.allclose(z, grids.dist.points, atol=1e-4)
            and np.allclose(f, grids.freq.channel_freqs, atol=1e-4)):
        raise GridMismatchError(f"{path}: profile axes do not match the canonical grid")
    return PowerProfile2D(values, grids)


def simulator(fiber: FiberParams = FiberParams(), grids: Grids = Grids(),
              pump_freqs=DEFAULT_PUMP_FREQS, step_km: float = 0.1):
    """Default cost-evaluator binding: pump batch (n, 4) dBm -> profiles (n, 44, 100)."""
    def evaluate(pump_dbm):
        return propagate_batch(pump_dbm, fiber, grids, pump_freqs, step_km)
    return evaluate
