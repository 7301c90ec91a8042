import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gasfgan.cluster import (SensorFeature, build_features, elbow_point, elbow_select,
                             farthest_point_init, kmeans_fit, lloyd, load_assignment,
                             route_sensor, save_assignment, write_inertia_csv)
from gasfgan.data import WEEKDAY, partition_observed
from gasfgan.errors import DataError

from conftest import make_series


def _feats(points):
    return [SensorFeature(f"s{i:02d}", np.asarray(p, dtype=float))
            for i, p in enumerate(points)]


def _blobs(seed=0, n=6):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [10, 0], [0, 10]])
    pts = np.vstack([c + 0.3 * rng.standard_normal((n, 2)) for c in centers])
    return pts, np.repeat([0, 1, 2], n)


def test_quantile_oracle():
    f = build_features(np.array([[0.0, 2.0], [10.0, 4.0]]))
    # linear interpolation between order statistics: q_p = lo + p (hi - lo)
    # quantile-major: (q10 slot0, q10 slot1, q30 slot0, ...)
    assert f.vector.tolist() == pytest.approx([1, 2.2, 3, 2.6, 5, 3.0, 7, 3.4, 9, 3.8])


def test_features_from_dataset_and_series():
    days = [make_series(np.full(4, v), sensor_id="abc",
                        day=make_series([0]).day.replace(day=i + 1))
            for i, v in enumerate([1.0, 3.0, 5.0])]
    ds = partition_observed("abc", days, WEEKDAY)
    a = build_features(ds)
    b = build_features(days)
    assert a.sensor_id == b.sensor_id == "abc"
    assert a.vector.shape == (20,)
    np.testing.assert_allclose(a.vector, b.vector)
    np.testing.assert_allclose(a.vector[8:12], 3.0)  # median slot block


def test_features_need_two_days():
    with pytest.raises(DataError):
        build_features([make_series([1.0, 2.0])])


def test_kmeans_recovers_blobs():
    pts, truth = _blobs()
    a = kmeans_fit(_feats(pts), 3, seed=0)
    labels = np.array([a.labels[f"s{i:02d}"] for i in range(len(pts))])
    for g in range(3):
        assert len(set(labels[truth == g])) == 1
    assert len(set(labels)) == 3
    assert a.inertia_history == sorted(a.inertia_history, reverse=True)
    assert a.members(labels[0]) == [f"s{i:02d}" for i in range(6)]


def test_kmeans_is_seed_deterministic():
    pts = np.random.default_rng(1).random((30, 3))
    a, b = kmeans_fit(_feats(pts), 4, 5), kmeans_fit(_feats(pts), 4, 5)
    assert a.labels == b.labels and a.inertia == b.inertia


def test_kmeans_errors():
    with pytest.raises(DataError):
        kmeans_fit(_feats([[0.0], [1.0]]), 3)
    with pytest.raises(DataError):
        kmeans_fit([SensorFeature("a", np.zeros(1)), SensorFeature("a", np.ones(1))], 1)


def test_farthest_point_ties_take_lowest_index():
    X = np.array([[0.0], [1.0], [-1.0]])

    class First:
        def integers(self, n):
            return 0
    C = farthest_point_init(X, 2, First())
    assert C[:, 0].tolist() == [0.0, 1.0]


def test_empty_cluster_is_reseeded():
    X = np.array([[0.0], [0.1], [5.0], [5.1]])
    C, labels, inertia, _, _ = lloyd(X, np.array([[0.0], [0.0]]))
    assert sorted(set(labels.tolist())) == [0, 1]
    assert inertia == pytest.approx(0.01)


def test_elbow_point_oracle():
    ks = [1, 2, 3, 4, 5]
    # normalized curve (1, .1398, .0323, .0108, 0); largest second difference at K=2
    assert elbow_point(ks, [100, 20, 10, 8, 7]) == (2, False)
    assert elbow_point(ks, [50, 40, 30, 20, 10]) == (1, True)
    assert elbow_point(ks, [5, 5, 5, 5, 5]) == (1, True)
    with pytest.raises(DataError):
        elbow_point([1, 2], [3, 1])


def test_elbow_selects_three_blobs():
    pts, _ = _blobs()
    res = elbow_select(_feats(pts), range(1, 8), seed=0)
    assert res.K_c == 3 and not res.flat
    assert res.assignment.K == 3


def test_flat_curve_warns():
    # identical sensors: inertia is zero for every K
    with pytest.warns(UserWarning):
        res = elbow_select(_feats(np.ones((4, 2))), [1, 2, 3], seed=0)
    assert res.K_c == 1 and res.flat


@given(arrays(np.float64, (12, 3), elements=st.floats(-5, 5)), st.integers(0, 2**16))
def test_elbow_inertia_never_increases(points, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = elbow_select(_feats(points), range(1, 7), seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(res.inertias, res.inertias[1:]))


def test_elbow_needs_enough_candidates():
    with pytest.raises(DataError):
        elbow_select(_feats([[0.0], [1.0]]), range(1, 5))
    with pytest.raises(DataError):
        elbow_select(_feats(np.arange(5.0)[:, None]), [3, 2, 1])


def test_routing():
    pts, _ = _blobs()
    a = kmeans_fit(_feats(pts), 3, seed=0)
    assert route_sensor("s00", a) == a.labels["s00"]
    assert route_sensor("new", a, [10.2, 0.1]) == a.labels["s06"]
    with pytest.raises(DataError):
        route_sensor("new", a)
    # equidistant from two centroids: the lower index wins
    a.centroids = np.array([[1.0], [-1.0]])
    assert route_sensor("mid", a, [0.0]) == 0


def test_assignment_round_trip(tmp_path):
    pts, _ = _blobs()
    res = elbow_select(_feats(pts), range(1, 6), seed=0)
    save_assignment(res.assignment, tmp_path / "a.json", res)
    back = load_assignment(tmp_path / "a.json")
    assert back.labels == res.assignment.labels and back.K == 3
    np.testing.assert_array_equal(back.centroids, res.assignment.centroids)
    write_inertia_csv(res.ks, res.inertias, tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text().splitlines()[0] == "K,inertia"
