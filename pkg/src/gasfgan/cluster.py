"""Sensor grouping: quantile profile features, k-means and elbow selection."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gasfgan.errors import DataError

QUANTILES = (10, 30, 50, 70, 90)
ASSIGNMENT_SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class SensorFeature:
    sensor_id: str
    vector: np.ndarray


@dataclass
class ClusterAssignment:
    K: int
    centroids: np.ndarray
    labels: dict
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    def members(self, k):
        return sorted(s for s, lab in self.labels.items() if lab == k)


@dataclass
class ElbowResult:
    K_c: int
    ks: list
    inertias: list
    flat: bool
    assignments: dict

    @property
    def assignment(self) -> ClusterAssignment:
        return self.assignments[self.K_c]


def build_features(days, sensor_id=None, quantiles=QUANTILES) -> SensorFeature:
    """Per-slot percentiles across fully observed days, concatenated.

    ``days`` is a :class:`~gasfgan.data.SensorDataset`, a list of
    :class:`~gasfgan.data.DailySeries`, or a ``(D, T)`` array. Percentiles use
    linear interpolation between order statistics.
    """
    if hasattr(days, "fully_observed") and not callable(getattr(days, "fully_observed")) \
            and isinstance(days.fully_observed, list):
        sensor_id = sensor_id or days.sensor_id
        days = days.fully_observed
    if isinstance(days, np.ndarray):
        matrix = np.atleast_2d(days).astype(np.float64)
    else:
        days = list(days)
        if days and sensor_id is None:
            sensor_id = days[0].sensor_id
        matrix = np.array([d.values for d in days if d.fully_observed], dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise DataError(f"sensor {sensor_id}: need at least 2 fully observed days "
                        f"to build quantile features")
    q = np.percentile(matrix, quantiles, axis=0, method="linear")
    return SensorFeature(sensor_id, q.reshape(-1))


def _stack(features):
    ids = [f.sensor_id for f in features]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sensor ids in features")
    return ids, np.array([f.vector for f in features], dtype=np.float64)


def _sq_dist(X, C):
    d = (X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def _farthest_point(X, C):
    # argmax picks the lowest index on ties
    return int(np.argmax(_sq_dist(X, C).min(1)))


def farthest_point_init(X, K, rng):
    first = int(rng.integers(len(X)))
    C = [X[first]]
    for _ in range(K - 1):
        C.append(X[_farthest_point(X, np.array(C))])
    return np.array(C)


def lloyd(X, C, max_iter=300):
    """Lloyd iterations from centroids ``C``. Returns (C, labels, inertia, history, n_iter)."""
    C = np.array(C, dtype=np.float64)
    K = len(C)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dist(X, C)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            pts = X[labels == k]
            if len(pts):
                C[k] = pts.mean(0)
            else:
                # empty cluster: reseed at the point worst served by its centroid
                far = int(np.argmax(d[np.arange(len(X)), labels]))
                C[k] = X[far]
                labels[far] = k
    d = _sq_dist(X, C)
    labels = np.argmin(d, axis=1)
    inertia = float(((X - C[labels]) ** 2).sum())
    return C, labels, inertia, history, n_iter


def kmeans_fit(features, K: int, seed: int = 0, init=None, max_iter: int = 300
               ) -> ClusterAssignment:
    """k-means with farthest-point seeding from a seeded random first centroid."""
    ids, X = _stack(features)
    if K < 1:
        raise DataError("K must be >= 1")
    if K > len(X):
        raise DataError(f"K={K} exceeds the number of sensors ({len(X)})")
    if init is None:
        init = farthest_point_init(X, K, np.random.default_rng(seed))
    C, labels, inertia, history, n_iter = lloyd(X, init, max_iter)
    return ClusterAssignment(K, C, dict(zip(ids, labels.tolist())), inertia,
                             history, n_iter)


def elbow_point(ks, inertias, tol=1e-9):
    """Maximum second difference of the min-max normalized inertia curve.

    Returns ``(K_c, flat)``; ``flat`` is True when no interior point bends
    (e.g. a straight line), in which case the smallest K is returned.
    """
    ks = list(ks)
    y = np.asarray(inertias, dtype=np.float64)
    if len(ks) < 3:
        raise DataError("elbow selection needs at least 3 values of K")
    span = y.max() - y.min()
    if span <= 0:
        return ks[0], True
    y = (y - y.min()) / span
    second = y[:-2] - 2.0 * y[1:-1] + y[2:]
    i = int(np.argmax(second))
    if second[i] <= tol:
        return ks[0], True
    return ks[i + 1], False


def elbow_select(features, K_range, seed: int = 0) -> ElbowResult:
    """Fit every K in ``K_range`` and pick the elbow.

    Each fit after the first is warm-started from the previous K's centroids
    plus the farthest point from them, so inertia cannot increase with K.
    """
    ks = list(K_range)
    if len(ks) < 3:
        raise DataError("elbow selection needs at least 3 values of K")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise DataError("K_range must be strictly increasing")
    ids, X = _stack(features)
    ks = [k for k in ks if k <= len(X)]
    if len(ks) < 3:
        raise DataError(f"only {len(X)} sensors; too few for a {len(ks)}-point elbow")
    assignments = {}
    C = farthest_point_init(X, ks[0], np.random.default_rng(seed))
    for k in ks:
        while len(C) < k:
            C = np.vstack([C, X[_farthest_point(X, C)]])
        assignments[k] = kmeans_fit(features, k, seed, init=C)
        C = assignments[k].centroids
    inertias = [assignments[k].inertia for k in ks]
    K_c, flat = elbow_point(ks, inertias)
    if flat:
        warnings.warn("inertia curve has no distinct elbow; returning the smallest K",
                      stacklevel=2)
    return ElbowResult(K_c, ks, inertias, flat, assignments)


def route_sensor(sensor_id, assignment: ClusterAssignment, feature=None) -> int:
    """Stored label for known sensors, nearest centroid otherwise (lowest index on ties)."""
    if sensor_id in assignment.labels:
        return int(assignment.labels[sensor_id])
    if feature is None:
        raise DataError(f"sensor {sensor_id} is not in the assignment and no "
                        f"feature vector was given")
    vec = np.asarray(getattr(feature, "vector", feature), dtype=np.float64)
    d = ((assignment.centroids - vec) ** 2).sum(1)
    return int(np.argmin(d))


def save_assignment(assignment: ClusterAssignment, path, elbow: ElbowResult | None = None):
    """JSON document plus a sibling ``<stem>_centroids.npy`` it references."""
    path = Path(path)
    centroid_file = path.with_name(path.stem + "_centroids.npy")
    np.save(centroid_file, assignment.centroids)
    doc = {
        "schema_version": ASSIGNMENT_SCHEMA_VERSION,
        "K": assignment.K,
        "centroids": centroid_file.name,
        "labels": {k: int(v) for k, v in sorted(assignment.labels.items())},
        "inertia": assignment.inertia,
    }
    if elbow is not None:
        doc["elbow"] = {"K_c": elbow.K_c, "flat": elbow.flat, "ks": elbow.ks,
                        "inertias": elbow.inertias}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_assignment(path) -> ClusterAssignment:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != ASSIGNMENT_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported assignment schema {doc.get('schema_version')}")
    centroids = np.load(path.with_name(doc["centroids"]))
    return ClusterAssignment(doc["K"], centroids, dict(doc["labels"]), doc["inertia"])


def write_inertia_csv(ks, inertias, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "inertia"])
        for k, v in zip(ks, inertias):
            w.writerow([k, repr(float(v))])
