import numpy as np
import pytest

from raman2d.experiments import (SweepReport, equally_spaced_levels, run_de_comparison,
                                 run_flat_gain_sweep, run_testset_eval, save_curves_svg,
                                 save_heatmap_svg)
from raman2d.optimize import DeParams
from raman2d.pipeline import Dataset
from raman2d.sim import propagate_batch

TRUE_PUMPS = np.array([[6.0, 12.0, 9.0, 15.0], [15.0, 3.0, 17.0, 10.0], [0.0, 18.0, 14.0, 19.0]])


class OracleModel:
    """Stands in for a trained model: returns fixed pump vectors."""

    def __init__(self, pumps):
        self.pumps = np.asarray(pumps, dtype=float)

    def predict_batch(self, profiles):
        return self.pumps[: len(profiles)].copy()


@pytest.fixture(scope="module")
def targets():
    return propagate_batch(TRUE_PUMPS)


def test_levels():
    lv = equally_spaced_levels(0.7, 6.3, 9)
    assert np.allclose(np.diff(lv), 0.7) and lv[-1] == pytest.approx(6.3)
    assert np.allclose(equally_spaced_levels(0.48, 4.4, 5), [0.48, 1.46, 2.44, 3.42, 4.4])


def test_testset_eval_with_oracle(targets):
    ds = Dataset(TRUE_PUMPS, targets)
    rep = run_testset_eval(OracleModel(TRUE_PUMPS), ds)
    assert rep.mae.shape == (3,)
    assert np.all(rep.mae < 1e-4)  # float32 storage only
    assert rep.flagged.size == 0 and rep.failed.size == 0
    bad = run_testset_eval(OracleModel(np.full((3, 4), -5.0)), ds)
    np.testing.assert_array_equal(bad.flagged, np.flatnonzero(bad.mae > 1.0))
    assert bad.flagged.size >= 1
    assert bad.stats.mean == pytest.approx(bad.mae.mean())


def test_testset_csv(tmp_path, targets):
    ds = Dataset(TRUE_PUMPS, targets)
    rep = run_testset_eval(OracleModel(TRUE_PUMPS), ds)
    rep.to_csv(tmp_path / "t.csv", ds.pumps)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].split(",")[-1] == "true_p4_dbm"


def test_comparison_shapes_and_averaging(targets, tmp_path):
    guess = TRUE_PUMPS[:2] + 0.5
    params = DeParams(max_iterations=6, seed=3)
    rep = run_de_comparison(OracleModel(guess), targets[:2], params, repetitions=2)
    assert rep.cnn_de_curves.shape == rep.de_curves.shape == (2, 2, 7)
    np.testing.assert_allclose(rep.cnn_de_avg_curve, rep.cnn_de_curves.reshape(4, 7).mean(axis=0))
    np.testing.assert_array_equal(rep.cnn_de_mae, rep.cnn_de_curves[:, :, -1])
    # the prediction seeds the population, so DE can only improve on it
    assert np.all(rep.cnn_de_mae <= rep.cnn_mae[:, None])
    assert np.all(np.diff(rep.de_curves, axis=2) <= 0)
    again = run_de_comparison(OracleModel(guess), targets[:2], params, repetitions=2)
    assert np.array_equal(again.de_curves, rep.de_curves)
    rep.to_csv(tmp_path / "p.csv", tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 8
    assert rep.summary()["profiles"] == 2


def test_comparison_needs_two_targets(targets):
    with pytest.raises(ValueError):
        run_de_comparison(OracleModel(TRUE_PUMPS), targets[:1])


def test_sweep_small(tmp_path):
    rep = run_flat_gain_sweep([1.0, 3.0], iterations=4, params=DeParams(seed=1))
    assert len(rep.rows) == 2 and len(rep.curves) == 2
    for r in rep.rows:
        assert r.cost == pytest.approx(0.5 * r.j0 + 0.5 * r.j1)
        assert np.all(r.pumps <= r.upper) and np.all(r.upper == 23.0)
    assert np.all(np.diff(rep.average_curve()) <= 0)
    rep.to_csv(tmp_path / "s.csv", tmp_path / "c.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 3
    assert [lv["target_gain_db"] for lv in rep.summary()["levels"]] == [1.0, 3.0]


def test_sweep_rejects_unreachable_levels():
    with pytest.raises(ValueError, match="target levels"):
        run_flat_gain_sweep([40.0], iterations=1)
    with pytest.raises(ValueError):
        run_flat_gain_sweep([-1.0], iterations=1)


def test_average_curve_pads_with_final_value():
    rep = SweepReport([], [np.array([3.0, 2.0]), np.array([5.0, 4.0, 1.0, 0.5])])
    np.testing.assert_allclose(rep.average_curve(), [4.0, 3.0, 1.5, 1.25])


def test_svg_output_deterministic(tmp_path, targets):
    for name in ("a.svg", "b.svg"):
        save_heatmap_svg(targets[0], tmp_path / name)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    save_curves_svg({"x": [3, 2, 1]}, tmp_path / "c.svg")
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")
