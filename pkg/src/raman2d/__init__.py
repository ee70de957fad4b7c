"""Spectral-spatial signal power shaping in counter-pumped Raman amplifiers."""

from .sim import (FiberParams, FrequencyGrid, DistanceGrid, Grids, PumpConfig, PowerProfile2D,
                  GainSpectrum, dbm_to_mw, mw_to_dbm, propagate, propagate_batch, on_off_gain,
                  raman_gain_efficiency, simulator)
from .optimize import (PumpBounds, DeParams, DeResult, FlatGain, TargetProfile, mae_cost, j0, j1,
                       weighted_cost, cnn_init_bounds, de_optimize)

__all__ = [
    "FiberParams", "FrequencyGrid", "DistanceGrid", "Grids", "PumpConfig", "PowerProfile2D",
    "GainSpectrum", "dbm_to_mw", "mw_to_dbm", "propagate", "propagate_batch", "on_off_gain",
    "raman_gain_efficiency", "simulator", "PumpBounds", "DeParams", "DeResult", "FlatGain",
    "TargetProfile", "mae_cost", "j0", "j1", "weighted_cost", "cnn_init_bounds", "de_optimize",
]
