"""Desk-scale studies: test-set evaluation, DE initialization comparison, flat-gain sweeps."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import InverseModel, MaeStats, mae_statistics
from .optimize import (BatchCost, DeParams, FlatGain, PumpBounds, TargetProfile,
                       cnn_init_bounds, de_optimize)
from .sim import (DEFAULT_PUMP_FREQS, FiberParams, Grids, NumericalInstabilityError,
                  max_on_off_gain, simulator)

log = logging.getLogger(__name__)

EXPERIMENT_LEVELS = (0.48, 4.4, 5)
SIMULATION_LEVELS = (0.7, 6.3, 9)
SIMULATION_PUMP_CAP = 23.0


def equally_spaced_levels(start: float, end: float, count: int) -> np.ndarray:
    return np.linspace(start, end, count)


# -- test-set evaluation ---------------------------------------------------------

@dataclass
class TestsetReport:
    mae: np.ndarray  # per profile, NaN where re-simulation failed
    predictions: np.ndarray
    stats: MaeStats
    flagged: np.ndarray  # indices with MAE > threshold
    failed: np.ndarray  # indices whose re-simulation failed

    def to_csv(self, path, true_pumps=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["index", "mae_db", "flagged"] + [f"pred_p{i}_dbm" for i in range(1, 5)]
            if true_pumps is not None:
                head += [f"true_p{i}_dbm" for i in range(1, 5)]
            w.writerow(head)
            for i, (m, p) in enumerate(zip(self.mae, self.predictions)):
                row = [i, repr(float(m)), int(i in self.flagged)] + [repr(float(v)) for v in p]
                if true_pumps is not None:
                    row += [repr(float(v)) for v in true_pumps[i]]
                w.writerow(row)


def run_testset_eval(model: InverseModel, test_set, evaluator=None,
                     flag_threshold: float = 1.0) -> TestsetReport:
    """Predict pumps for every test profile, re-simulate them and score the maximum absolute error."""
    evaluator = evaluator or simulator(grids=test_set.grids)
    preds = model.predict_batch(test_set.profiles)
    targets = test_set.profiles.astype(float)
    mae = np.full(len(test_set), np.nan)
    try:
        mae[:] = np.abs(np.asarray(evaluator(preds)) - targets).max(axis=(1, 2))
    except (NumericalInstabilityError, ValueError):
        for i, p in enumerate(preds):
            try:
                mae[i] = np.abs(np.asarray(evaluator(p[None]))[0] - targets[i]).max()
            except (NumericalInstabilityError, ValueError) as exc:
                log.warning("re-simulation failed for test record %d: %s", i, exc)
    failed = np.flatnonzero(np.isnan(mae))
    ok = mae[~np.isnan(mae)]
    flagged = np.flatnonzero(mae > flag_threshold)
    return TestsetReport(mae, preds, mae_statistics(ok), flagged, failed)


# -- DE comparison ------------------------------------------------------------------

@dataclass
class ComparisonReport:
    cnn_mae: np.ndarray  # (P,)
    cnn_de_mae: np.ndarray  # (P, R) final MAE per repetition
    de_mae: np.ndarray  # (P, R)
    cnn_de_curves: np.ndarray  # (P, R, T) best-so-far MAE per iteration
    de_curves: np.ndarray

    @property
    def cnn_de_avg_curve(self) -> np.ndarray:
        return self.cnn_de_curves.mean(axis=1).mean(axis=0)

    @property
    def de_avg_curve(self) -> np.ndarray:
        return self.de_curves.mean(axis=1).mean(axis=0)

    def summary(self) -> dict:
        return {
            "profiles": int(len(self.cnn_mae)),
            "repetitions": int(self.de_mae.shape[1]),
            "mean_cnn_mae": float(self.cnn_mae.mean()),
            "mean_cnn_de_mae": float(self.cnn_de_mae.mean()),
            "mean_de_mae": float(self.de_mae.mean()),
            "max_cnn_de_mae": float(self.cnn_de_mae.max()),
        }

    def to_csv(self, per_profile_path, curves_path) -> None:
        with open(per_profile_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile", "cnn_mae_db", "cnn_de_mae_db", "de_mae_db"])
            for i in range(len(self.cnn_mae)):
                w.writerow([i, repr(float(self.cnn_mae[i])), repr(float(self.cnn_de_mae[i].mean())),
                            repr(float(self.de_mae[i].mean()))])
        with open(curves_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "cnn_de_mean_mae_db", "de_mean_mae_db"])
            for k, (a, b) in enumerate(zip(self.cnn_de_avg_curve, self.de_avg_curve)):
                w.writerow([k, repr(float(a)), repr(float(b))])


def run_de_comparison(model: InverseModel, targets, params: DeParams = DeParams(max_iterations=100),
                      repetitions: int = 10, evaluator=None,
                      global_bounds: PumpBounds = PumpBounds()) -> ComparisonReport:
    """CNN-assisted versus randomly initialized DE on each target profile.

    Both modes share the seeds ``params.seed + r`` for repetition r.
    """
    targets = np.asarray(targets, dtype=float)
    if len(targets) < 2:
        raise ValueError("need at least two target profiles")
    evaluator = evaluator or simulator()
    length = params.max_iterations + 1
    p_primes = model.predict_batch(targets)
    cnn_mae, cnn_de, de, cnn_curves, de_curves = [], [], [], [], []
    for target, p_prime in zip(targets, p_primes):
        cost = BatchCost(TargetProfile(target), evaluator)
        cnn_mae.append(float(cost(p_prime[None])[0]))
        box = cnn_init_bounds(p_prime, global_bounds)
        rows = ([], [], [], [])
        for r in range(repetitions):
            prm = replace(params, seed=params.seed + r)
            seeded = de_optimize(cost, box, prm, p_prime=p_prime)
            rand = de_optimize(cost, global_bounds, prm)
            rows[0].append(seeded.best_cost)
            rows[1].append(rand.best_cost)
            rows[2].append(seeded.padded_history(length))
            rows[3].append(rand.padded_history(length))
        cnn_de.append(rows[0])
        de.append(rows[1])
        cnn_curves.append(rows[2])
        de_curves.append(rows[3])
    return ComparisonReport(np.array(cnn_mae), np.array(cnn_de), np.array(de),
                            np.array(cnn_curves), np.array(de_curves))


# -- flat-gain sweep ------------------------------------------------------------------

@dataclass
class SweepRow:
    target_gain: float
    j0: float
    j1: float
    cost: float
    pumps: np.ndarray
    upper: np.ndarray


@dataclass
class SweepReport:
    rows: list[SweepRow]
    curves: list[np.ndarray] = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.rows])

    def average_curve(self) -> np.ndarray:
        n = max(len(c) for c in self.curves)
        return np.mean([np.concatenate([c, np.full(n - len(c), c[-1])]) for c in self.curves], axis=0)

    def summary(self) -> dict:
        return {"levels": [
            {"target_gain_db": r.target_gain, "j0_db": r.j0, "j1_db": r.j1, "cost_db": r.cost,
             "pumps_dbm": [float(v) for v in r.pumps]} for r in self.rows]}

    def to_csv(self, rows_path, curves_path=None) -> None:
        with open(rows_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target_gain_db", "j0_db", "j1_db", "cost_db", "p1_dbm", "p2_dbm", "p3_dbm", "p4_dbm"])
            for r in self.rows:
                w.writerow([repr(float(x)) for x in (r.target_gain, r.j0, r.j1, r.cost, *r.pumps)])
        if curves_path is not None:
            with open(curves_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "mean_cost_db"])
                for k, v in enumerate(self.average_curve()):
                    w.writerow([k, repr(float(v))])


def run_flat_gain_sweep(levels, pump_cap: float = SIMULATION_PUMP_CAP,
                        iterations: int = 300, params: DeParams = DeParams(),
                        m0: float = 0.5, m1: float = 0.5, fiber: FiberParams = FiberParams(),
                        grids: Grids = Grids(), pump_freqs=DEFAULT_PUMP_FREQS,
                        evaluator=None) -> SweepReport:
    """Solve the weighted flat-gain problem for each target level with pumps capped at ``pump_cap``."""
    levels = np.asarray(levels, dtype=float)
    g_max = max_on_off_gain(fiber, grids, (pump_cap,) * 4, pump_freqs)
    if np.any(levels < 0) or np.any(levels > 1.3 * g_max):
        raise ValueError(f"target levels must lie in [0, {1.3 * g_max:.2f}] dB for a {pump_cap} dBm cap")
    evaluator = evaluator or simulator(fiber, grids, pump_freqs)
    bounds = PumpBounds.capped(pump_cap)
    prm = replace(params, max_iterations=iterations)
    rows, curves = [], []
    for g in levels:
        cost = BatchCost(FlatGain(float(g), m0, m1), evaluator)
        res = de_optimize(cost, bounds, prm)
        c0, c1 = cost.components(res.best_pumps)
        rows.append(SweepRow(float(g), float(c0[0]), float(c1[0]), res.best_cost,
                             res.best_pumps, bounds.upper))
        curves.append(res.history)
        log.info("level %.2f dB: cost %.3f (J0 %.3f, J1 %.3f)", g, res.best_cost, c0[0], c1[0])
    return SweepReport(rows, curves)


# -- artifacts ---------------------------------------------------------------------

def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "raman2d"
    return plt


def save_heatmap_svg(values, path, grids: Grids = Grids(), label="power (dBm)", title=None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    f, z = grids.freq.channel_freqs, grids.dist.points
    im = ax.imshow(np.asarray(values), aspect="auto", origin="lower",
                   extent=[z[0], z[-1], f[0], f[-1]], cmap="viridis")
    ax.set_xlabel("distance (km)")
    ax.set_ylabel("frequency (THz)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label=label)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_curves_svg(curves: dict, path, ylabel="cost (dB)") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, y in curves.items():
        ax.plot(np.arange(len(y)), y, label=name)
    ax.set_xlabel("DE iteration")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
