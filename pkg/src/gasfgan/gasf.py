"""Gramian Angular Summation Field codec.

Pipeline for one day: zero counts become 1, natural log, min-max to [0, 1]
with stats fitted once per model, replicate padding, then
``G[i, j] = cos(phi_i + phi_j)`` with ``phi = arccos(x)``. Because
``x in [0, 1]`` keeps ``phi in [0, pi/2]``, the diagonal
``cos(2 phi) = 2x^2 - 1`` inverts exactly to ``x = sqrt((diag + 1) / 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from gasfgan.errors import CorruptImageError, DegenerateRangeError, DomainError

DEFAULT_PAD = 3
DEFAULT_SIGMA = 1.0
GAUSS_TRUNCATE = 4.0

_DOMAIN_TOL = 1e-9
_DIAG_TOL = 1e-6


@dataclass(frozen=True)
class PreprocessStats:
    vmin: float
    vmax: float
    pad: int = DEFAULT_PAD
    transform: str = "zero_to_one+ln+minmax"

    def __post_init__(self):
        if not self.vmax > self.vmin:
            raise DegenerateRangeError(
                f"log-domain range is degenerate (vmin={self.vmin}, vmax={self.vmax})")
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")

    def to_dict(self):
        return {"vmin": self.vmin, "vmax": self.vmax, "pad": self.pad,
                "transform": self.transform}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["vmin"]), float(d["vmax"]), int(d["pad"]),
                   d.get("transform", "zero_to_one+ln+minmax"))


@dataclass(frozen=True)
class NormalizedSeries:
    values: np.ndarray  # padded, length T + 2*pad
    stats: PreprocessStats

    @property
    def unpadded(self) -> np.ndarray:
        p = self.stats.pad
        return self.values[p:len(self.values) - p]


@dataclass(frozen=True)
class GasfImage:
    matrix: np.ndarray
    angles: np.ndarray
    radius: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def log_flow(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.log(np.where(v == 0, 1.0, v))


def fit_stats(series_values, pad: int = DEFAULT_PAD, masks=None) -> PreprocessStats:
    """Fit log-domain min/max over observed entries of one or many days."""
    logs = log_flow(series_values)
    if masks is not None:
        logs = logs[np.asarray(masks) == 1]
    if logs.size == 0:
        raise DegenerateRangeError("no observed values to fit stats on")
    return PreprocessStats(float(logs.min()), float(logs.max()), pad)


def normalize(values, stats: PreprocessStats) -> np.ndarray:
    """Raw flows -> [0, 1] without padding; out-of-range values clip."""
    x = (log_flow(values) - stats.vmin) / (stats.vmax - stats.vmin)
    return np.clip(x, 0.0, 1.0)


def inverse_preprocess(normalized, stats: PreprocessStats) -> np.ndarray:
    """[0, 1] values (unpadded) -> raw flow counts."""
    x = np.asarray(normalized, dtype=np.float64)
    return np.exp(stats.vmin + x * (stats.vmax - stats.vmin))


def pad_replicate(values, pad: int = DEFAULT_PAD) -> np.ndarray:
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    values = np.asarray(values, dtype=np.float64)
    if pad == 0:
        return values.copy()
    return np.pad(values, pad, mode="edge")


def preprocess(series, stats: PreprocessStats | None = None, pad: int = DEFAULT_PAD):
    """Normalize and pad one day.

    ``series`` is a :class:`~gasfgan.data.DailySeries` or a plain vector. When
    ``stats`` is None they are fitted on this input's observed entries.
    """
    mask = getattr(series, "mask", None)
    values = getattr(series, "values", series)
    if stats is None:
        stats = fit_stats(values, pad=pad, masks=mask)
    x = normalize(values, stats)
    return NormalizedSeries(pad_replicate(x, stats.pad), stats), stats


def encode(normalized) -> GasfImage:
    x = np.asarray(getattr(normalized, "values", normalized), dtype=np.float64)
    if ((x < -_DOMAIN_TOL) | (x > 1 + _DOMAIN_TOL)).any():
        bad = x[(x < -_DOMAIN_TOL) | (x > 1 + _DOMAIN_TOL)][0]
        raise DomainError(f"GASF input must lie in [0, 1]; found {bad}")
    x = np.clip(x, 0.0, 1.0)
    phi = np.arccos(x)
    matrix = np.cos(phi[:, None] + phi[None, :])
    n = len(x)
    radius = np.arange(1, n + 1) / n
    return GasfImage(matrix, phi, radius)


def diagonal_to_normalized(matrix, pad: int = 0) -> np.ndarray:
    """Recover [0, 1] values from a GASF diagonal and strip padding."""
    d = np.diagonal(np.asarray(matrix, dtype=np.float64)).copy()
    if ((d < -1 - _DIAG_TOL) | (d > 1 + _DIAG_TOL)).any():
        raise CorruptImageError("GASF diagonal outside [-1, 1]")
    x = np.sqrt((np.clip(d, -1.0, 1.0) + 1.0) / 2.0)
    return x[pad:len(x) - pad] if pad else x


def decode(image, stats: PreprocessStats) -> np.ndarray:
    """GASF image (or bare matrix) -> raw flow counts of length T."""
    matrix = getattr(image, "matrix", image)
    return inverse_preprocess(diagonal_to_normalized(matrix, stats.pad), stats)


def gaussian_smooth(image, sigma: float = DEFAULT_SIGMA):
    """2-D Gaussian blur with reflect boundary, clipped back to [-1, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    matrix = getattr(image, "matrix", image)
    if sigma == 0:
        out = np.array(matrix, dtype=np.float64, copy=True)
    else:
        out = gaussian_filter(np.asarray(matrix, dtype=np.float64), sigma,
                              mode="reflect", truncate=GAUSS_TRUNCATE)
        np.clip(out, -1.0, 1.0, out=out)
    if isinstance(image, GasfImage):
        return GasfImage(out, image.angles, image.radius)
    return out


def series_to_images(series_list, stats: PreprocessStats,
                     sigma: float = DEFAULT_SIGMA):
    """Training tensors: ``(images, normalized)``.

    ``images`` is ``(N, S, S)`` float32 of smoothed GASF matrices and
    ``normalized`` the matching ``(N, T)`` unpadded [0, 1] series.
    """
    images, normalized = [], []
    for s in series_list:
        ns, _ = preprocess(s, stats)
        images.append(gaussian_smooth(encode(ns).matrix, sigma))
        normalized.append(ns.unpadded)
    return np.asarray(images, dtype=np.float32), np.asarray(normalized)


def save_image(image, path):
    """Write an 8-bit grayscale PNG, mapping [-1, 1] linearly onto [0, 255]."""
    from PIL import Image

    matrix = np.asarray(getattr(image, "matrix", image), dtype=np.float64)
    pixels = np.round((np.clip(matrix, -1, 1) + 1.0) * 127.5).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)
