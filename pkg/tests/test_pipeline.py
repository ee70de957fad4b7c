import numpy as np
import pytest
from scipy.signal import savgol_coeffs

from raman2d.optimize import PumpBounds
from raman2d.pipeline import (Dataset, DatasetFormatError, DatasetGenerationError, RawTrace,
                              SmootherSpec, dataset_load, dataset_save, downsample, fine_steps,
                              gen_dataset, otdr_emulate, savgol_coefficients, savgol_smooth)
from raman2d.sim import FiberParams, Grids, propagate_batch, propagate_fine

SPEC = SmootherSpec(19, 2)


def window_fit_oracle(y, window, order):
    """Smooth by an explicit polynomial fit on every (possibly truncated) window."""
    h = window // 2
    n = len(y)
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - h), min(n, i + h + 1)
        x = np.arange(lo, hi) - i
        coef = np.polyfit(x, y[lo:hi], order)
        out[i] = np.polyval(coef, 0.0)
    return out


@pytest.fixture(scope="module")
def fine_profile():
    n = fine_steps(50.0)
    z, prof = propagate_fine(np.array([12.0, 8.0, 15.0, 18.0]), n_steps=n)
    return z[1] - z[0], prof


def test_fine_trace_resolution(fine_profile):
    spacing, prof = fine_profile
    assert abs(spacing - 0.0082) < 1e-5
    assert prof.shape == (44, fine_steps(50.0) + 1)


def test_otdr_noiseless_equals_truth(fine_profile):
    spacing, prof = fine_profile
    traces = otdr_emulate(prof, spacing, 0.0, seed=1)
    assert len(traces) == 44
    assert all(np.array_equal(t.samples, row) for t, row in zip(traces, prof))
    assert traces[3].channel_index == 3
    assert traces[0].positions[-1] == pytest.approx(50.0)


def test_otdr_seeded_and_noise_level(fine_profile):
    spacing, prof = fine_profile
    a = otdr_emulate(prof, spacing, 0.1, seed=42)
    b = otdr_emulate(prof, spacing, 0.1, seed=42)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    resid = a[0].samples - prof[0]
    assert len(resid) > 6000
    assert 0.08 <= resid.std(ddof=1) <= 0.12


def test_otdr_rejects_negative_sigma(fine_profile):
    spacing, prof = fine_profile
    with pytest.raises(ValueError):
        otdr_emulate(prof, spacing, -0.1)


def test_smoother_spec_validation():
    with pytest.raises(ValueError):
        SmootherSpec(18, 2)
    with pytest.raises(ValueError):
        SmootherSpec(3, 3)


def test_savgol_constant_unchanged():
    y = np.full(200, -17.25)
    np.testing.assert_allclose(savgol_smooth(y, SPEC), y, atol=1e-12)


def test_savgol_reproduces_quadratic_including_edges():
    z = np.linspace(0, 50, 6099)
    y = -16.0 - 0.2 * z + 0.004 * z**2
    assert np.max(np.abs(savgol_smooth(y, SPEC) - y)) <= 1e-9


@pytest.mark.parametrize("pos", [0, 3, 9, 10, 25, 40, 45, 49])
def test_savgol_impulse_matches_window_fit_oracle(pos):
    y = np.zeros(50)
    y[pos] = 1.0
    np.testing.assert_allclose(savgol_smooth(y, SPEC), window_fit_oracle(y, 19, 2), atol=1e-12)


def test_savgol_interior_coefficients_match_scipy():
    np.testing.assert_allclose(savgol_coefficients(19, 2), savgol_coeffs(19, 2), atol=1e-14)


def test_savgol_trace_too_short():
    with pytest.raises(ValueError):
        savgol_smooth(np.zeros(10), SPEC)


def test_savgol_accepts_raw_trace_and_2d():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(3, 100))
    out = savgol_smooth(y, SPEC)
    for row, o in zip(y, out):
        np.testing.assert_allclose(savgol_smooth(row, SPEC), o, atol=1e-13)
    t = savgol_smooth(RawTrace(y[0], 0.0082, 5), SPEC)
    assert isinstance(t, RawTrace) and t.channel_index == 5


def test_downsample_identity_on_target_grid():
    grid = Grids().dist.points
    trace = np.concatenate([[-16.0], -16.0 - 0.2 * grid])
    np.testing.assert_allclose(downsample(trace, grid, 0.5), -16.0 - 0.2 * grid, atol=1e-12)


def test_downsample_affine_exact_and_quadratic_close():
    n = fine_steps(50.0)
    spacing = 50.0 / n
    z = spacing * np.arange(n + 1)
    target = Grids().dist.points
    np.testing.assert_allclose(downsample(3.0 - 0.2 * z, target, spacing), 3.0 - 0.2 * target, atol=1e-10)
    quad = lambda x: -16 - 0.2 * x + 0.01 * x**2
    assert np.max(np.abs(downsample(quad(z), target, spacing) - quad(target))) < 1e-3


def test_downsample_range_errors():
    with pytest.raises(ValueError):
        downsample(np.zeros(100), [0.5, 60.0], 0.1)
    with pytest.raises(ValueError):
        downsample(np.zeros(11), [0.0, 0.1, 0.2], 0.5)


def test_gen_dataset_single_record_matches_simulator():
    ds = gen_dataset(1, seed=3, noise_sigma=0.0)
    direct = propagate_batch(ds.pumps.astype(float))
    assert np.max(np.abs(ds.profiles - direct)) < 1e-3


def test_gen_dataset_bounds_and_determinism(tmp_path):
    bounds = PumpBounds(np.full(4, -5.0), np.array([20.0, 20.0, 20.0, 19.94]))
    a = gen_dataset(12, bounds, seed=9, noise_sigma=0.05, chunk=5)
    b = gen_dataset(12, bounds, seed=9, noise_sigma=0.05, chunk=12)
    assert np.array_equal(a.pumps, b.pumps) and np.array_equal(a.profiles, b.profiles)
    assert np.all(a.pumps >= bounds.lower) and np.all(a.pumps <= bounds.upper)
    dataset_save(a, tmp_path / "a.rds")
    dataset_save(b, tmp_path / "b.rds")
    assert (tmp_path / "a.rds").read_bytes() == (tmp_path / "b.rds").read_bytes()
    c = gen_dataset(12, bounds, seed=10, noise_sigma=0.05)
    assert not np.array_equal(a.pumps, c.pumps)


def test_gen_dataset_reports_failing_pumps():
    fiber = FiberParams(raman_peak_efficiency=5e4)
    with np.errstate(all="ignore"), pytest.raises(DatasetGenerationError) as info:
        gen_dataset(2, seed=0, noise_sigma=0.0, fiber=fiber)
    assert info.value.pumps.shape == (4,)


@pytest.fixture
def small_ds():
    rng = np.random.default_rng(1)
    return Dataset(rng.uniform(-5, 20, (10, 4)), rng.normal(-20, 3, (10, 44, 100)),
                   metadata={"seed": 1, "config_hash": "abc"})


def test_dataset_round_trip(tmp_path, small_ds):
    path = tmp_path / "d.rds"
    dataset_save(small_ds, path)
    back = dataset_load(path)
    assert np.array_equal(back.pumps, small_ds.pumps)
    assert np.array_equal(back.profiles, small_ds.profiles)
    assert back.grids == small_ds.grids
    assert back.metadata == small_ds.metadata
    data = path.read_bytes()
    assert data[:4] == b"RDS1"
    assert int.from_bytes(data[6:10], "little") == len(back) == 10


def test_dataset_corrupt_magic(tmp_path, small_ds):
    path = tmp_path / "d.rds"
    dataset_save(small_ds, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(DatasetFormatError, match="magic"):
        dataset_load(path)


def test_dataset_truncated(tmp_path, small_ds):
    path = tmp_path / "d.rds"
    dataset_save(small_ds, path)
    path.write_bytes(path.read_bytes()[:5000])
    with pytest.raises(DatasetFormatError, match="truncated"):
        dataset_load(path)


def test_dataset_bad_version(tmp_path, small_ds):
    path = tmp_path / "d.rds"
    dataset_save(small_ds, path)
    data = bytearray(path.read_bytes())
    data[4:6] = (7).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(DatasetFormatError, match="version"):
        dataset_load(path)


def test_dataset_csv_export(tmp_path, small_ds):
    path = tmp_path / "d.csv"
    small_ds.to_csv(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 11
    assert len(lines[0].split(",")) == 4 + 4400
    assert float(lines[1].split(",")[0]) == float(small_ds.pumps[0, 0])


def test_dataset_split():
    ds = Dataset(np.zeros((10, 4)), np.zeros((10, 44, 100)))
    a, b = ds.split(7)
    assert len(a) == 7 and len(b) == 3
