"""Measurement emulation and dataset generation.

A record is produced the way the bench measures it: the simulator is run
at OTDR resolution, Gaussian dB-domain noise is added per channel, each
trace is Savitzky-Golay smoothed and then linearly interpolated onto the
500 m profile grid.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .sim import (DEFAULT_PUMP_FREQS, FiberParams, FrequencyGrid, DistanceGrid, Grids,
                  NumericalInstabilityError, propagate_fine)

OTDR_RESOLUTION_KM = 0.0082

MAGIC = b"RDS1"
VERSION = 1
_HEADER = struct.Struct("<4sHI6d")


class DatasetFormatError(ValueError):
    pass


class DatasetGenerationError(RuntimeError):
    def __init__(self, pumps, cause):
        self.pumps = np.asarray(pumps)
        super().__init__(f"propagation failed for pump vector {self.pumps.tolist()} dBm: {cause}")


@dataclass(frozen=True)
class RawTrace:
    samples: np.ndarray  # dBm
    spacing: float  # km
    channel_index: int

    @property
    def positions(self) -> np.ndarray:
        return self.spacing * np.arange(len(self.samples))


@dataclass(frozen=True)
class SmootherSpec:
    window: int = 19
    order: int = 2

    def __post_init__(self):
        if self.window % 2 != 1:
            raise ValueError("Savitzky-Golay window must be odd")
        if not self.window > self.order >= 0:
            raise ValueError("need window > order >= 0")


def fine_steps(length_km: float, resolution_km: float = OTDR_RESOLUTION_KM) -> int:
    """Integrator steps giving a uniform trace spacing as close as possible to the OTDR resolution."""
    return max(1, int(round(length_km / resolution_km)))


def otdr_emulate(fine_profile, spacing: float, noise_sigma: float = 0.0, seed=None):
    """Per-channel raw traces from a fine (44, N) profile.

    Adds zero-mean Gaussian noise of ``noise_sigma`` dB. ``seed`` may be an
    int, a SeedSequence or a Generator.
    """
    if noise_sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    fine = np.asarray(fine_profile, dtype=float)
    if spacing > OTDR_RESOLUTION_KM + 1e-9:
        raise ValueError("fine profile must be sampled at OTDR resolution or finer")
    if noise_sigma > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        fine = fine + rng.normal(0.0, noise_sigma, fine.shape)
    return [RawTrace(row.copy(), spacing, i) for i, row in enumerate(fine)]


@lru_cache(maxsize=64)
def _fit_weights(left: int, right: int, order: int) -> np.ndarray:
    """Weights giving the value at offset 0 of a least-squares polynomial over [-left, right]."""
    x = np.arange(-left, right + 1, dtype=float)
    vander = np.vander(x, order + 1, increasing=True)
    w = np.linalg.pinv(vander)[0]
    w.flags.writeable = False
    return w


def savgol_coefficients(window: int, order: int) -> np.ndarray:
    h = window // 2
    return _fit_weights(h, h, order)


def savgol_smooth(trace, spec: SmootherSpec = SmootherSpec()):
    """Savitzky-Golay smoothing along the last axis.

    Interior samples use the centered window; the first and last
    ``window // 2`` samples are fitted over the truncated window that
    stays inside the trace. Accepts a :class:`RawTrace` or an array.
    """
    if isinstance(trace, RawTrace):
        return RawTrace(savgol_smooth(trace.samples, spec), trace.spacing, trace.channel_index)
    y = np.asarray(trace, dtype=float)
    n = y.shape[-1]
    if n < spec.window:
        raise ValueError(f"trace of {n} samples is shorter than window {spec.window}")
    h = spec.window // 2
    w = savgol_coefficients(spec.window, spec.order)
    windows = np.lib.stride_tricks.sliding_window_view(y, spec.window, axis=-1)
    out = np.empty_like(y)
    out[..., h:n - h] = windows @ w
    for i in range(h):
        left = _fit_weights(i, h, spec.order)
        out[..., i] = y[..., :i + h + 1] @ left
        right = _fit_weights(h, i, spec.order)
        out[..., n - 1 - i] = y[..., n - 1 - i - h:] @ right
    return out


def downsample(trace, target_points, spacing: float | None = None) -> np.ndarray:
    """Linear interpolation of a uniformly sampled trace (first sample at z = 0) onto ``target_points``."""
    if isinstance(trace, RawTrace):
        y, spacing = trace.samples, trace.spacing
    else:
        y = np.asarray(trace, dtype=float)
        if spacing is None:
            raise ValueError("spacing is required for array traces")
    target = np.asarray(target_points, dtype=float)
    z = spacing * np.arange(y.shape[-1])
    if len(target) > 1 and spacing > np.min(np.diff(target)) + 1e-12:
        raise ValueError("trace spacing is coarser than the target grid")
    tol = 1e-9 * max(1.0, z[-1])
    if target.min() < -tol or target.max() > z[-1] + tol:
        raise ValueError(
            f"target points [{target.min()}, {target.max()}] km outside trace range [0, {z[-1]}] km")
    target = np.clip(target, 0.0, z[-1])
    if y.ndim == 1:
        return np.interp(target, z, y)
    flat = y.reshape(-1, y.shape[-1])
    return np.stack([np.interp(target, z, row) for row in flat]).reshape(y.shape[:-1] + (len(target),))


def measure_profiles(pump_batch, noise_sigma: float, rngs, fiber: FiberParams = FiberParams(),
                     grids: Grids = Grids(), pump_freqs=DEFAULT_PUMP_FREQS,
                     smoother: SmootherSpec = SmootherSpec()) -> np.ndarray:
    """Run the full measurement chain for a batch of pump vectors -> (B, 44, 100)."""
    n_fine = fine_steps(fiber.length)
    _, fine = propagate_fine(np.atleast_2d(pump_batch), fiber, grids.freq, pump_freqs, n_fine)
    spacing = fiber.length / n_fine
    out = np.empty((len(fine),) + grids.shape)
    for b, prof in enumerate(fine):
        traces = otdr_emulate(prof, spacing, noise_sigma, rngs[b] if noise_sigma > 0 else None)
        raw = np.stack([t.samples for t in traces])
        out[b] = downsample(savgol_smooth(raw, smoother), grids.dist.points, spacing)
    return out


# -- datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    pumps: np.ndarray  # (n, 4) float32, dBm
    profiles: np.ndarray  # (n, 44, 100) float32, dBm
    grids: Grids = field(default_factory=Grids)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pumps = np.asarray(self.pumps, dtype=np.float32)
        self.profiles = np.asarray(self.profiles, dtype=np.float32)
        if self.pumps.ndim != 2 or self.pumps.shape[1] != 4:
            raise ValueError("pumps must have shape (n, 4)")
        if self.profiles.shape != (len(self.pumps),) + self.grids.shape:
            raise ValueError(f"profiles must have shape (n, {self.grids.shape[0]}, {self.grids.shape[1]})")

    def __len__(self):
        return len(self.pumps)

    def subset(self, index) -> "Dataset":
        return Dataset(self.pumps[index], self.profiles[index], self.grids, dict(self.metadata))

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, len(self)))

    def to_csv(self, path) -> None:
        n_f, n_z = self.grids.shape
        cols = [f"p{i}_dbm" for i in range(1, 5)] + [
            f"P_{f:.1f}THz_{z:g}km" for f in self.grids.freq.channel_freqs for z in self.grids.dist.points]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for p, prof in zip(self.pumps, self.profiles):
                fh.write(",".join(repr(float(v)) for v in np.concatenate([p, prof.ravel()])) + "\n")


def _to_f32_within(x, lo, hi):
    """Cast to float32, nudging values that rounded past a bound back inside."""
    out = np.asarray(x, dtype=np.float32)
    lo32 = np.asarray(lo, dtype=np.float32) + np.zeros_like(out)
    hi32 = np.asarray(hi, dtype=np.float32) + np.zeros_like(out)
    lo32 = np.where(lo32 < lo, np.nextafter(lo32, np.float32(np.inf)), lo32)
    hi32 = np.where(hi32 > hi, np.nextafter(hi32, np.float32(-np.inf)), hi32)
    return np.clip(out, lo32, hi32)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def gen_dataset(n: int, bounds=None, seed: int = 0, noise_sigma: float = 0.05,
                fiber: FiberParams = FiberParams(), grids: Grids = Grids(),
                pump_freqs=DEFAULT_PUMP_FREQS, smoother: SmootherSpec = SmootherSpec(),
                chunk: int = 32) -> Dataset:
    """Random pump vectors (uniform in dBm within ``bounds``) and their measured profiles.

    Each record draws from its own child of ``SeedSequence(seed)``, so the
    result does not depend on ``chunk``.
    """
    from .optimize import PumpBounds

    if n <= 0:
        raise ValueError("n must be positive")
    bounds = bounds if bounds is not None else PumpBounds()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    pumps = np.stack([bounds.lower + r.random(4) * (bounds.upper - bounds.lower) for r in rngs])
    pumps = _to_f32_within(pumps, bounds.lower, bounds.upper)
    profiles = np.empty((n,) + grids.shape, dtype=np.float32)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        try:
            profiles[sl] = measure_profiles(pumps[sl].astype(float), noise_sigma, rngs[sl], fiber,
                                            grids, pump_freqs, smoother)
        except NumericalInstabilityError as exc:
            for i in range(sl.start, sl.stop):
                try:
                    measure_profiles(pumps[i:i + 1].astype(float), 0.0, [None], fiber, grids, pump_freqs)
                except NumericalInstabilityError:
                    raise DatasetGenerationError(pumps[i], exc) from exc
            raise
    config = {
        "n": n, "seed": seed, "noise_sigma": noise_sigma, "fiber": asdict(fiber),
        "pump_freqs": list(pump_freqs), "lower": bounds.lower.tolist(), "upper": bounds.upper.tolist(),
        "smoother": asdict(smoother),
    }
    meta = {"seed": seed, "noise_sigma": noise_sigma, "config_hash": config_hash(config)}
    return Dataset(pumps, profiles, grids, meta)


def dataset_save(ds: Dataset, path) -> None:
    """Binary layout (little-endian).

    magic ``RDS1``, u16 version, u32 record count, six f64 grid values
    (channels, distances, f0, df, z0, dz), then per record 4 f32 pump
    powers followed by channels*distances f32 profile values in
    channel-major order. A u32-length-prefixed JSON metadata block
    trails the records.
    """
    g = ds.grids
    header = _HEADER.pack(MAGIC, VERSION, len(ds), float(g.shape[0]), float(g.shape[1]),
                          g.freq.start, g.freq.spacing, g.dist.points[0], g.dist.spacing)
    recs = np.concatenate([ds.pumps, ds.profiles.reshape(len(ds), -1)], axis=1).astype("<f4")
    meta = json.dumps(ds.metadata, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(recs.tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def dataset_load(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, count, n_f, n_z, f0, df, z0, dz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    n_f, n_z = int(n_f), int(n_z)
    try:
        grids = Grids(FrequencyGrid(f0, df, n_f), DistanceGrid(z0 + dz * (n_z - 1), n_z))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: invalid grid descriptor ({exc})") from None
    if not np.isclose(grids.dist.points[0], z0):
        raise DatasetFormatError(f"{path}: distance grid must start at one spacing")
    rec_len = 4 + n_f * n_z
    body = _HEADER.size + 4 * rec_len * count
    if len(data) < body + 4:
        raise DatasetFormatError(f"{path}: truncated, header declares {count} records")
    recs = np.frombuffer(data, dtype="<f4", count=rec_len * count, offset=_HEADER.size)
    recs = recs.reshape(count, rec_len)
    (meta_len,) = struct.unpack_from("<I", data, body)
    if len(data) != body + 4 + meta_len:
        raise DatasetFormatError(f"{path}: metadata block length mismatch")
    try:
        meta = json.loads(data[body + 4:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: corrupt metadata ({exc})") from None
    return Dataset(recs[:, :4].copy(), recs[:, 4:].reshape(count, n_f, n_z).copy(), grids, meta)
