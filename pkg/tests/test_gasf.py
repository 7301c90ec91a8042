import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gasfgan.errors import CorruptImageError, DegenerateRangeError, DomainError
from gasfgan.gasf import (PreprocessStats, decode, diagonal_to_normalized, encode,
                          fit_stats, gaussian_smooth, inverse_preprocess, log_flow,
                          normalize, pad_replicate, preprocess, save_image,
                          series_to_images)

from conftest import make_series

unit = arrays(np.float64, st.integers(1, 40), elements=st.floats(0.0, 1.0))


def brute_gasf(x):
    n = len(x)
    g = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            g[i, j] = math.cos(math.acos(x[i]) + math.acos(x[j]))
    return g


def test_two_point_oracle():
    # phi = (0, pi/2): cos(0)=1, cos(pi/2)=0, cos(pi)=-1
    np.testing.assert_allclose(encode([1.0, 0.0]).matrix, [[1, 0], [0, -1]], atol=1e-15)


def test_encode_matches_brute_force():
    x = np.random.default_rng(0).random(17)
    np.testing.assert_allclose(encode(x).matrix, brute_gasf(x), atol=1e-14)


def test_polar_coordinates():
    img = encode([0.5, 1.0, 0.0, 0.25])
    np.testing.assert_allclose(img.angles, np.arccos([0.5, 1.0, 0.0, 0.25]))
    np.testing.assert_allclose(img.radius, [0.25, 0.5, 0.75, 1.0])


def test_encode_domain():
    with pytest.raises(DomainError):
        encode([0.2, 1.5])
    with pytest.raises(DomainError):
        encode([-0.1])
    # float noise just outside the interval is tolerated
    encode([1.0 + 1e-12, -1e-12])


@given(unit)
def test_round_trip_and_structure(x):
    g = encode(x).matrix
    assert np.abs(g - g.T).max() <= 1e-12
    assert g.min() >= -1.0 and g.max() <= 1.0
    np.testing.assert_allclose(np.diag(g), 2 * x ** 2 - 1, atol=1e-12)
    np.testing.assert_allclose(diagonal_to_normalized(g), x, atol=1e-7)


def test_corrupt_diagonal():
    g = encode([0.3, 0.4]).matrix
    g[1, 1] = 1.5
    with pytest.raises(CorruptImageError):
        diagonal_to_normalized(g)


def test_log_transform_zero_becomes_one():
    np.testing.assert_allclose(log_flow([0, 1, math.e]), [0, 0, 1])


def test_fit_stats_and_normalize():
    stats = fit_stats([[1, 10, 100], [0, 1000, 5]], pad=3)
    assert stats.vmin == 0.0 and stats.vmax == pytest.approx(math.log(1000))
    np.testing.assert_allclose(normalize([1, 1000, 10], stats), [0, 1, 1 / 3])
    # out-of-range values clip
    assert normalize([5000], stats)[0] == 1.0


def test_fit_stats_respects_mask():
    stats = fit_stats([[1, 10, 1e6]], masks=[[1, 1, 0]])
    assert stats.vmax == pytest.approx(math.log(10))


def test_degenerate_range():
    with pytest.raises(DegenerateRangeError):
        fit_stats([[7, 7, 7]])
    with pytest.raises(DegenerateRangeError):
        PreprocessStats(1.0, 1.0)


def test_stats_serialization():
    s = PreprocessStats(0.5, 4.0, 2)
    assert PreprocessStats.from_dict(s.to_dict()) == s


def test_replicate_padding():
    np.testing.assert_array_equal(pad_replicate([1.0, 2.0, 3.0], 2), [1, 1, 1, 2, 3, 3, 3])
    np.testing.assert_array_equal(pad_replicate([1.0], 0), [1.0])
    with pytest.raises(ValueError):
        pad_replicate([1.0], -1)


def test_preprocess_default_size():
    values = np.random.default_rng(1).integers(0, 400, 288)
    ns, stats = preprocess(make_series(values))
    assert len(ns.values) == 294 and len(ns.unpadded) == 288
    assert encode(ns).size == 294


@given(arrays(np.int64, 24, elements=st.integers(0, 2000)))
def test_decode_inverts_preprocess(values):
    stats = PreprocessStats(0.0, math.log(2001.0), pad=3)
    ns, _ = preprocess(make_series(values.astype(float)), stats)
    # zeros map to log(1) == 0, i.e. back to a count of one
    expected = np.where(values == 0, 1, values)
    np.testing.assert_allclose(decode(encode(ns), stats), expected, rtol=1e-6)


def test_inverse_preprocess_is_exp_affine():
    stats = PreprocessStats(1.0, 3.0)
    np.testing.assert_allclose(inverse_preprocess([0.0, 0.5, 1.0], stats),
                               np.exp([1.0, 2.0, 3.0]))


def test_gaussian_smooth():
    g = encode(np.random.default_rng(2).random(20)).matrix
    np.testing.assert_array_equal(gaussian_smooth(g, 0.0), g)
    sm = gaussian_smooth(g, 1.0)
    assert sm.shape == g.shape
    assert np.abs(sm - sm.T).max() < 1e-12
    assert sm.min() >= -1 and sm.max() <= 1
    # smoothing a constant image leaves it unchanged
    np.testing.assert_allclose(gaussian_smooth(np.full((9, 9), 0.3), 1.0), 0.3)
    with pytest.raises(ValueError):
        gaussian_smooth(g, -1.0)


def test_series_to_images():
    rng = np.random.default_rng(3)
    days = [make_series(rng.integers(1, 300, 72)) for _ in range(4)]
    stats = fit_stats([d.values for d in days], pad=3)
    images, norm = series_to_images(days, stats, sigma=0.0)
    assert images.shape == (4, 78, 78) and images.dtype == np.float32
    assert norm.shape == (4, 72)
    np.testing.assert_allclose(diagonal_to_normalized(images[0], 3), norm[0], atol=1e-3)


def test_save_image(tmp_path):
    from PIL import Image

    save_image(encode([1.0, 0.0]), tmp_path / "g.png")
    px = np.asarray(Image.open(tmp_path / "g.png"))
    assert px.tolist() == [[255, 128], [128, 0]]
