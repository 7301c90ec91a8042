import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gasfgan.baselines import historical_average_impute, historical_profile, mean_fill_impute
from gasfgan.data import CorruptionSpec, corrupt
from gasfgan.errors import DataError
from gasfgan.metrics import (aggregate_report, eval_mask_of, mae, mre, plot_error_cdf,
                             plot_mr_sweep, plot_sensor_summary, realized_mr, rmse, score)

from conftest import make_series

ONES = [1, 1]


def test_mae_oracle():
    assert mae([10, 20], [12, 17], ONES) == 2.5


def test_rmse_oracle():
    assert rmse([10, 20], [12, 17], ONES) == pytest.approx(math.sqrt(6.5), abs=1e-15)


def test_mre_excludes_zero_truth():
    value, excluded = mre([10, 0], [12, 5], ONES, return_excluded=True)
    assert value == pytest.approx(0.2) and excluded == 1


def test_only_flagged_positions_count():
    assert mae([10, 20, 30], [12, 17, 100], [1, 1, 0]) == 2.5


def test_metric_errors():
    with pytest.raises(DataError):
        mae([1, 2], [1, 2], [0, 0])
    with pytest.raises(DataError):
        mae([1, 2], [1], [1, 1])
    with pytest.raises(DataError):
        mre([0, 0], [1, 1], ONES)


def test_score_dict():
    s = score([10, 0, 4], [12, 5, 4], [1, 1, 0])
    assert s["n_scored"] == 2 and s["mre_excluded"] == 1
    assert s["mae"] == 3.5


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 500)),
       arrays(np.float64, 50, elements=st.floats(-100, 100)))
def test_mae_never_exceeds_rmse(truth, noise):
    imputed = truth + noise[:len(truth)]
    m = np.ones(len(truth))
    assert mae(truth, imputed, m) <= rmse(truth, imputed, m) + 1e-9


def test_realized_mr():
    assert realized_mr([[1, 0, 0, 1], [1, 1, 1, 0]]) == 3 / 8
    with pytest.raises(DataError):
        realized_mr([])


def test_eval_mask_of():
    s = make_series(np.arange(1.0, 11.0))
    c = corrupt(s, CorruptionSpec(0.3, seed=0))
    assert eval_mask_of(c).sum() == 3
    # real gaps have no truth and are never scored
    assert eval_mask_of(make_series([1.0, 0.0], mask=[1, 0])).sum() == 0


def _cells():
    rows = []
    for sensor in ("a", "b"):
        for mr in (0.1, 0.5):
            for rep in range(3):
                rows.append({"sensor": sensor, "mr": mr, "repetition": rep,
                             "mae": rep + mr, "rmse": 2 * rep + mr, "mre": 0.1 * rep})
    return rows


def test_aggregate_report(tmp_path):
    rep = aggregate_report(_cells(), group_by="sensor")
    agg = rep.aggregates.set_index("sensor")
    assert agg.loc["a", "count"] == 6
    assert agg.loc["a", "mae_mean"] == pytest.approx(1.3)
    assert agg.loc["a", "mae_median"] == pytest.approx(1.3)
    assert agg.loc["b", "mae_min"] == pytest.approx(0.1)
    assert agg.loc["b", "mae_max"] == pytest.approx(2.5)
    rep.write(tmp_path / "m")
    back = pd.read_csv(tmp_path / "m_cells.csv")
    assert len(back) == 12
    assert rep.to_dict()["repetitions"] == 3


def test_aggregate_by_pair_and_errors():
    rep = aggregate_report(_cells(), group_by=("sensor", "mr"))
    assert len(rep.aggregates) == 4 and (rep.aggregates["count"] == 3).all()
    with pytest.raises(DataError):
        aggregate_report([])
    with pytest.raises(DataError):
        aggregate_report(_cells(), group_by="cluster")


def test_plots(tmp_path):
    cells = pd.DataFrame(_cells())
    plot_mr_sweep(cells, tmp_path / "a.png")
    plot_sensor_summary(cells, tmp_path / "b.png")
    plot_error_cdf({"x": [0.1, 0.5, 2.0]}, tmp_path / "c.png")
    assert all((tmp_path / f).stat().st_size > 0 for f in ("a.png", "b.png", "c.png"))


# ---- baselines

def test_historical_average():
    train = [make_series([10.0, 20.0]), make_series([30.0, 0.0], mask=[1, 0])]
    prof = historical_profile(train)
    assert prof.tolist() == [20.0, 20.0]
    c = make_series([5.0, 0.0], mask=[1, 0])
    assert historical_average_impute(c, prof).values.tolist() == [5.0, 20.0]
    with pytest.raises(DataError):
        historical_profile([make_series([1.0, 0.0], mask=[1, 0])])


def test_mean_fill():
    c = make_series([4.0, 0.0, 8.0], mask=[1, 0, 1])
    assert mean_fill_impute(c).values.tolist() == [4.0, 6.0, 8.0]
