"""Seeded synthetic traffic-like corpora for tests, demos and acceptance runs."""
from __future__ import annotations

import datetime as dt

import numpy as np

from gasfgan.data import DailySeries


def two_peak_profiles(n: int, T: int = 288, seed: int = 0, *,
                      peaks=((8.0, 1.2, 180.0), (17.5, 1.8, 220.0)),
                      base: float = 12.0, amp_jitter: float = 0.2,
                      phase_jitter: float = 0.5, noise: float = 0.2,
                      integer: bool = True) -> np.ndarray:
    """``(n, T)`` daily flow profiles: two Gaussian rush-hour peaks over a floor.

    ``peaks`` holds ``(center_hour, width_hours, amplitude)``. Each day draws
    its own amplitude scale (uniform +-``amp_jitter``) and peak shift (normal,
    ``phase_jitter`` hours), then every bin gets independent multiplicative
    noise ``1 + noise * N(0, 1)``.
    """
    rng = np.random.default_rng(seed)
    hours = (np.arange(T) + 0.5) * 24.0 / T
    out = np.empty((n, T))
    for i in range(n):
        day = np.full(T, base)
        for center, width, amp in peaks:
            a = amp * rng.uniform(1 - amp_jitter, 1 + amp_jitter)
            c = center + rng.normal(0.0, phase_jitter)
            day += a * np.exp(-0.5 * ((hours - c) / width) ** 2)
        day *= np.clip(1.0 + noise * rng.standard_normal(T), 0.05, None)
        out[i] = day
    if integer:
        out = np.round(out)
    return out


def as_daily_series(profiles, sensor_id="synthetic", start=dt.date(2013, 1, 1)):
    return [DailySeries(sensor_id, start + dt.timedelta(days=i), row,
                        np.ones(len(row), dtype=np.uint8))
            for i, row in enumerate(np.asarray(profiles))]


GROUP_PATTERNS = (
    # morning-heavy commuter corridor
    dict(peaks=((7.5, 1.0, 260.0), (17.0, 1.5, 90.0)), base=10.0),
    # evening-heavy corridor
    dict(peaks=((8.0, 1.0, 80.0), (17.5, 1.2, 280.0)), base=14.0),
    # low-volume rural road with a broad midday hump
    dict(peaks=((12.5, 3.5, 45.0), (18.0, 1.5, 15.0)), base=4.0),
)


def planted_sensor_groups(n_per_group: int = 8, days: int = 20, T: int = 288,
                          seed: int = 0, patterns=GROUP_PATTERNS):
    """Sensors drawn from well-separated daily patterns.

    Returns ``(series_by_sensor, labels)`` where ``labels[sensor_id]`` is the
    index of the planted pattern.
    """
    rng = np.random.default_rng(seed)
    series, labels = {}, {}
    for g, pattern in enumerate(patterns):
        for j in range(n_per_group):
            sid = f"g{g}s{j:02d}"
            profiles = two_peak_profiles(days, T, int(rng.integers(2**31)), **pattern)
            series[sid] = as_daily_series(profiles, sid)
            labels[sid] = g
    return series, labels
