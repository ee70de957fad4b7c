"""Differential evolution over pump powers and the design costs it minimizes."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .sim import (DEFAULT_PUMP_MAX, P_MIN_DBM, GainSpectrum, GridMismatchError,
                  PowerProfile2D, dbm_to_mw, mw_to_dbm)

log = logging.getLogger(__name__)


class DEError(RuntimeError):
    pass


# -- costs -------------------------------------------------------------------

def _values(p):
    return p.values if isinstance(p, (PowerProfile2D, GainSpectrum)) else np.asarray(p, dtype=float)


def mae_cost(profile, target) -> float:
    """Maximum absolute error (dB) between two profiles on the same grid."""
    if isinstance(profile, PowerProfile2D) and isinstance(target, PowerProfile2D):
        if profile.grids != target.grids:
            raise GridMismatchError("profiles are on different grids")
    a, b = _values(profile), _values(target)
    if a.shape != b.shape:
        raise GridMismatchError(f"profile shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


def j0(profile) -> float:
    """Maximum spectral power excursion: worst max-min spread over channels at any z."""
    v = _values(profile)
    return float(np.max(v.max(axis=-2) - v.min(axis=-2)))


def j1(gain, target_level: float) -> float:
    """Largest deviation of the span-end on-off gain from a flat target level."""
    return float(np.max(np.abs(_values(gain) - target_level)))


@dataclass(frozen=True)
class TargetProfile:
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", _values(self.target))


@dataclass(frozen=True)
class FlatGain:
    target_gain: float
    m0: float = 0.5
    m1: float = 0.5

    def __post_init__(self):
        if not (self.m0 > 0 and self.m1 > 0 and np.isclose(self.m0 + self.m1, 1.0)):
            raise ValueError("weights must satisfy m0, m1 > 0 and m0 + m1 = 1")


CostSpec = TargetProfile | FlatGain


class BatchCost:
    """Vectorized cost: maps pump vectors (n, 4) in dBm to costs (n,) in dB.

    ``evaluator`` maps a batch of pump vectors to profiles of shape
    (n, 44, 100). The pumps-off reference needed by the on-off gain is
    computed once and cached.
    """

    def __init__(self, spec: CostSpec, evaluator: Callable[[np.ndarray], np.ndarray]):
        self.spec = spec
        self.evaluator = evaluator
        self._off_end: Optional[np.ndarray] = None

    @property
    def off_end(self) -> np.ndarray:
        if self._off_end is None:
            self._off_end = np.asarray(self.evaluator(np.full((1, 4), -np.inf)))[0, :, -1]
        return self._off_end

    def components(self, pumps) -> tuple[np.ndarray, np.ndarray]:
        """Per-candidate (J0, J1) for the flat-gain mode."""
        prof = np.asarray(self.evaluator(np.atleast_2d(pumps)))
        spread = prof.max(axis=1) - prof.min(axis=1)
        gain = prof[:, :, -1] - self.off_end
        return spread.max(axis=1), np.abs(gain - self.spec.target_gain).max(axis=1)

    def __call__(self, pumps) -> np.ndarray:
        pumps = np.atleast_2d(pumps)
        if isinstance(self.spec, TargetProfile):
            prof = np.asarray(self.evaluator(pumps))
            if prof.shape[1:] != self.spec.target.shape:
                raise GridMismatchError("evaluator output does not match target grid")
            return np.abs(prof - self.spec.target).max(axis=(1, 2))
        c0, c1 = self.components(pumps)
        return self.spec.m0 * c0 + self.spec.m1 * c1


def weighted_cost(pumps, spec: CostSpec, evaluator) -> float:
    """Cost of a single pump vector under ``spec``."""
    return float(BatchCost(spec, evaluator)(np.asarray(pumps, dtype=float)[None])[0])


# -- bounds ------------------------------------------------------------------

@dataclass(frozen=True)
class PumpBounds:
    lower: np.ndarray = field(default_factory=lambda: np.full(4, P_MIN_DBM))
    upper: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PUMP_MAX))

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (4,) or hi.shape != (4,):
            raise ValueError("bounds must be 4-vectors")
        if np.any(lo < P_MIN_DBM - 1e-9) or np.any(lo > hi):
            raise ValueError("bounds must satisfy -5 dBm <= lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def capped(cls, cap: float) -> "PumpBounds":
        return cls(np.full(4, P_MIN_DBM), np.full(4, float(cap)))

    def contains(self, x, tol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def cnn_init_bounds(p_prime, global_bounds: PumpBounds = PumpBounds()) -> PumpBounds:
    """Search box of +-50% around a predicted pump vector (dBm), taken in mW.

    The box is intersected with ``global_bounds``; if that leaves nothing
    for some pump the global bounds are returned instead.
    """
    p_mw = dbm_to_mw(np.asarray(p_prime, dtype=float))
    lo = mw_to_dbm(0.5 * p_mw)
    hi = mw_to_dbm(1.5 * p_mw)
    lo = np.maximum(lo, global_bounds.lower)
    hi = np.minimum(hi, global_bounds.upper)
    if np.any(lo > hi):
        log.warning("CNN bounds do not intersect global bounds; using global bounds")
        return global_bounds
    return PumpBounds(lo, hi)


# -- differential evolution ----------------------------------------------------

@dataclass(frozen=True)
class DeParams:
    population_size: int = 20
    F: float = 0.7
    CR: float = 0.9
    max_iterations: int = 100
    stagnation_window: int = 30
    stagnation_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if not 0 < self.F <= 2:
            raise ValueError("F must be in (0, 2]")
        if not 0 <= self.CR <= 1:
            raise ValueError("CR must be in [0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class DeResult:
    best_pumps: np.ndarray
    best_cost: float
    history: np.ndarray  # best-so-far cost after init and after each generation
    history_pumps: np.ndarray
    evaluations: int
    iterations: int
    bounds: PumpBounds

    def padded_history(self, length: int) -> np.ndarray:
        """History extended with its last value to ``length`` entries."""
        h = self.history[:length]
        return np.concatenate([h, np.full(length - len(h), h[-1])])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_cost_db", "p1_dbm", "p2_dbm", "p3_dbm", "p4_dbm"])
            for k, (c, p) in enumerate(zip(self.history, self.history_pumps)):
                w.writerow([k, repr(float(c))] + [repr(float(v)) for v in p])


def _reflect_clip(x, lo, hi):
    x = np.where(x < lo, 2 * lo - x, x)
    x = np.where(x > hi, 2 * hi - x, x)
    return np.clip(x, lo, hi)


def _evaluate(cost, pop, rng, bounds: PumpBounds):
    """Evaluate a population; failing members are resampled once."""
    def attempt(x):
        try:
            c = np.asarray(cost(x), dtype=float).reshape(len(x))
        except (ArithmeticError, ValueError) as exc:
            if len(x) == 1:
                return np.array([np.nan])
            log.warning("batch cost evaluation failed (%s); evaluating members singly", exc)
            c = np.concatenate([attempt(x[i:i + 1]) for i in range(len(x))])
        return c

    costs = attempt(pop)
    bad = ~np.isfinite(costs)
    if np.any(bad):
        pop = pop.copy()
        pop[bad] = bounds.lower + rng.random((bad.sum(), pop.shape[1])) * (bounds.upper - bounds.lower)
        costs[bad] = attempt(pop[bad])
        if not np.all(np.isfinite(costs)):
            raise DEError(f"cost evaluation failed twice at {pop[~np.isfinite(costs)].tolist()}")
    return pop, costs


def de_optimize(cost: Callable[[np.ndarray], np.ndarray], bounds: PumpBounds,
                params: DeParams = DeParams(), p_prime: Optional[Sequence[float]] = None,
                callback: Optional[Callable[[int, float], None]] = None) -> DeResult:
    """DE/rand/1/bin over a box.

    ``cost`` takes an (n, d) array of candidates and returns n costs. With
    ``p_prime`` given, the initial population is drawn uniformly inside
    ``bounds`` (normally from :func:`cnn_init_bounds`) and its first member
    is ``p_prime`` itself.
    """
    rng = np.random.default_rng(params.seed)
    lo, hi = bounds.lower, bounds.upper
    d = len(lo)
    n = params.population_size

    pop = lo + rng.random((n, d)) * (hi - lo)
    if p_prime is not None:
        pop[0] = np.clip(np.asarray(p_prime, dtype=float), lo, hi)
    pop, costs = _evaluate(cost, pop, rng, bounds)
    evals = n

    best = int(np.argmin(costs))
    history = [float(costs[best])]
    history_pumps = [pop[best].copy()]
    it = 0
    for it in range(1, params.max_iterations + 1):
        idx = np.array([rng.choice(np.delete(np.arange(n), i), 3, replace=False) for i in range(n)])
        a, b, c = pop[idx[:, 0]], pop[idx[:, 1]], pop[idx[:, 2]]
        mutant = a + params.F * (b - c)
        cross = rng.random((n, d)) < params.CR
        cross[np.arange(n), rng.integers(0, d, n)] = True
        trial = _reflect_clip(np.where(cross, mutant, pop), lo, hi)
        trial, trial_costs = _evaluate(cost, trial, rng, bounds)
        evals += n

        better = trial_costs <= costs
        pop[better] = trial[better]
        costs[better] = trial_costs[better]
        best = int(np.argmin(costs))
        history.append(float(costs[best]))
        history_pumps.append(pop[best].copy())
        if callback is not None:
            callback(it, history[-1])

        w = params.stagnation_window
        if w and len(history) > w and history[-w - 1] - history[-1] < params.stagnation_tol:
            break

    return DeResult(best_pumps=pop[best].copy(), best_cost=float(costs[best]),
                    history=np.array(history), history_pumps=np.array(history_pumps),
                    evaluations=evals, iterations=it, bounds=bounds)
