"""Reference imputers the GAN is compared against."""
import numpy as np

from gasfgan.data import DailySeries
from gasfgan.errors import DataError, UnsupportedInputError


def historical_profile(train_series) -> np.ndarray:
    """Mean of observed values per time-of-day slot across training days."""
    train_series = list(train_series)
    if not train_series:
        raise DataError("historical average needs training days")
    values = np.array([s.values for s in train_series])
    masks = np.array([s.mask for s in train_series], dtype=np.float64)
    counts = masks.sum(0)
    if (counts == 0).any():
        raise DataError("some slots are never observed in the training days")
    return (values * masks).sum(0) / counts


def _fill(corrupted: DailySeries, fill) -> DailySeries:
    values = np.where(corrupted.mask == 1, corrupted.values, fill)
    return DailySeries(corrupted.sensor_id, corrupted.day, values,
                       np.ones(corrupted.T, dtype=np.uint8), truth=corrupted.truth)


def historical_average_impute(corrupted: DailySeries, profile) -> DailySeries:
    return _fill(corrupted, np.asarray(profile, dtype=np.float64))


def mean_fill_impute(corrupted: DailySeries) -> DailySeries:
    """Fill every gap with the mean of that day's observed values."""
    if corrupted.n_observed == 0:
        raise UnsupportedInputError("mean fill needs at least one observed point")
    return _fill(corrupted, corrupted.values[corrupted.mask == 1].mean())
