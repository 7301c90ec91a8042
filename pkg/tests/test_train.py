import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gasfgan.errors import ComputeError, ConfigError, DataError
from gasfgan.gasf import diagonal_to_normalized, encode, fit_stats, series_to_images
from gasfgan.model import build_discriminator, build_generator
from gasfgan.synthetic import as_daily_series, two_peak_profiles
from gasfgan.train import (TrainConfig, TrainLog, diag_series, discriminator_step,
                           generator_loss, generator_step, median_bandwidth, mmd_score,
                           noisy_labels, rbf_kernel, train)

from conftest import tiny_specs


def brute_mmd(x, y, bandwidths):
    def k(a, b):
        d = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
        return sum(math.exp(-d / (2 * s * s)) for s in bandwidths) / len(bandwidths)
    kxx = sum(k(a, b) for a in x for b in x) / len(x) ** 2
    kxy = sum(k(a, b) for a in x for b in y) / (len(x) * len(y))
    kyy = sum(k(a, b) for a in y for b in y) / len(y) ** 2
    return math.sqrt(max(kxx - 2 * kxy + kyy, 0.0))


# ---- label noise

def test_soft_label_ranges_without_flip():
    cfg = TrainConfig(flip_fraction=0.0)
    pos, neg = noisy_labels(1000, cfg, np.random.default_rng(0))
    assert pos.min() >= 0.8 and pos.max() <= 1.1
    assert neg.min() >= 0.0 and neg.max() <= 0.3


def test_exact_count_flip():
    pos, neg = noisy_labels(100, TrainConfig(flip_fraction=0.1), np.random.default_rng(1))
    # a swapped positive now sits in the negative range and vice versa
    assert int((pos < 0.5).sum()) == 10
    assert int((neg > 0.5).sum()) == 10
    assert np.array_equal(pos < 0.5, neg > 0.5)


@given(st.integers(2, 200), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_flip_count_property(bs, frac, seed):
    pos, neg = noisy_labels(bs, TrainConfig(flip_fraction=frac), np.random.default_rng(seed))
    assert int((pos < 0.5).sum()) == int(math.floor(frac * bs + 0.5))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(pos_label_range=(1.1, 0.8))
    with pytest.raises(ConfigError):
        TrainConfig(generator_loss="wasserstein")
    with pytest.raises(ConfigError):
        TrainConfig(flip_fraction=1.5)
    assert TrainConfig(betas=[0.5, 0.9]).betas == (0.5, 0.9)


# ---- MMD

def test_mmd_zero_vs_one_oracle():
    x, y = np.zeros((4, 3)), np.ones((5, 3))
    # K(0,0)=K(1,1)=1 and K(0,1)=exp(-3/2)
    expected = math.sqrt(2 - 2 * math.exp(-1.5))
    assert mmd_score(x, y, [1.0]) == pytest.approx(expected, abs=1e-12)
    assert mmd_score(x, y, [1.0]) == pytest.approx(brute_mmd(x, y, [1.0]), abs=1e-12)


@given(arrays(np.float64, (6, 4), elements=st.floats(0, 1)),
       arrays(np.float64, (3, 4), elements=st.floats(0, 1)),
       st.lists(st.floats(0.1, 3.0), min_size=1, max_size=3))
def test_mmd_matches_brute_force(x, y, bws):
    assert mmd_score(x, y, bws) == pytest.approx(brute_mmd(x, y, bws), abs=1e-9)
    assert mmd_score(x, y, bws) == pytest.approx(mmd_score(y, x, bws), abs=1e-12)


def test_mmd_identical_sets():
    x = np.random.default_rng(0).random((20, 8))
    assert mmd_score(x, x.copy()) < 1e-6
    assert mmd_score(x, x[::-1]) < 1e-6


def test_mmd_errors():
    with pytest.raises(DataError):
        mmd_score(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(DataError):
        mmd_score(np.zeros((0, 3)), np.zeros((2, 3)))


def test_median_bandwidth():
    # one pair at squared distance 8 -> 2 sigma^2 = 8
    assert median_bandwidth(np.array([[0.0, 0.0], [2.0, 2.0]])) == pytest.approx(2.0)
    assert median_bandwidth(np.zeros((3, 2))) == 1.0


def test_rbf_kernel_averages_bandwidths():
    a, b = np.zeros((1, 1)), np.ones((1, 1))
    k = rbf_kernel(a, b, [1.0, 2.0])
    assert k[0, 0] == pytest.approx((math.exp(-0.5) + math.exp(-1 / 8)) / 2)


def test_diag_series_matches_numpy_decode():
    x = np.random.default_rng(0).random(12)
    img = torch.as_tensor(encode(x).matrix)[None]
    np.testing.assert_allclose(diag_series(img, 2)[0].numpy(),
                               diagonal_to_normalized(encode(x).matrix, 2), atol=1e-12)


# ---- update isolation and generator loss

def _models():
    gspec, dspec = tiny_specs()
    return build_generator(gspec, seed=0), build_discriminator(dspec, seed=1)


def _params(m):
    return [p.detach().clone() for p in m.parameters()]


def _changed(before, m):
    return any(not torch.equal(a, b) for a, b in zip(before, m.parameters()))


def test_update_isolation():
    gen, disc = _models()
    g_opt = torch.optim.Adam(gen.parameters(), lr=1e-2)
    d_opt = torch.optim.Adam(disc.parameters(), lr=1e-2)
    real = torch.rand(4, 78, 78) * 2 - 1
    fake = gen(torch.randn(4, 4))
    g0, d0 = _params(gen), _params(disc)
    discriminator_step(disc, d_opt, real, fake, torch.ones(4), torch.zeros(4))
    assert _changed(d0, disc) and not _changed(g0, gen)
    g1, d1 = _params(gen), _params(disc)
    generator_step(disc, g_opt, d_opt, fake)
    assert _changed(g1, gen) and not _changed(d1, disc)
    assert all(p.grad is None or not p.grad.any() for p in disc.parameters())


def test_generator_loss_forms():
    logits = torch.tensor([-2.0, 0.0, 3.0])
    d = torch.sigmoid(logits)
    assert generator_loss(logits).item() == pytest.approx(-torch.log(d).mean().item())
    assert generator_loss(logits, "minimax").item() == pytest.approx(
        torch.log(1 - d).mean().item(), rel=1e-6)


class _ConstantD(torch.nn.Module):
    def __init__(self, value, slope=0.0):
        super().__init__()
        self.value, self.slope = value, slope

    def logits(self, x):
        return self.value + self.slope * x.sum(dim=(-2, -1))


@pytest.mark.parametrize("kind", ["non_saturating", "minimax"])
def test_generator_gradient_vanishes_only_for_constant_d(kind):
    gen, _ = _models()
    gen = gen.double().eval()
    z = torch.randn(3, 4, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    w = gen.project.weight

    def loss(disc):
        with torch.no_grad():
            return generator_loss(disc.logits(gen(z)), kind).item()

    def fd(disc, h=1e-3):
        # central difference along one projection weight
        with torch.no_grad():
            w[0, 0] += h
            up = loss(disc)
            w[0, 0] -= 2 * h
            down = loss(disc)
            w[0, 0] += h
        return (up - down) / (2 * h)

    assert fd(_ConstantD(0.7)) == 0.0
    assert abs(fd(_ConstantD(0.7, slope=1.0))) > 1e-6


# ---- training loop

def _corpus(n=16, T=72, seed=0):
    days = as_daily_series(two_peak_profiles(n, T, seed))
    stats = fit_stats([d.values for d in days], pad=3)
    images, norm = series_to_images(days, stats, sigma=1.0)
    return images, norm, stats


def _run(epochs, resume=None, on_epoch=None, seed=0):
    images, norm, stats = _corpus()
    gen, disc = _models()
    cfg = TrainConfig(epochs=epochs, batch_size=4, seed=seed)
    return train(images, gen, disc, cfg, stats, real_series=norm, resume=resume,
                 on_epoch=on_epoch)


def test_train_log_and_determinism():
    seen = []
    ck, log = _run(3, on_epoch=lambda c, l: seen.append(c.epoch))
    assert seen == [1, 2, 3] and ck.epoch == 3
    assert [r["epoch"] for r in log.records] == [1, 2, 3]
    assert all(math.isfinite(r["d_loss"]) and r["mmd"] >= 0 for r in log.records)
    ck2, log2 = _run(3)
    assert log2.mmd == log.mmd
    for k, v in ck.generator_state.items():
        np.testing.assert_array_equal(v, ck2.generator_state[k])


def test_resume_matches_uninterrupted_run():
    snaps = {}
    full, full_log = _run(4, on_epoch=lambda c, l: snaps.setdefault(c.epoch, c))
    resumed, log = _run(4, resume=snaps[2])
    assert [r["epoch"] for r in log.records] == [1, 2, 3, 4]
    assert log.mmd == full_log.mmd
    for k, v in full.generator_state.items():
        np.testing.assert_array_equal(v, resumed.generator_state[k])
    for k, v in full.discriminator_state.items():
        np.testing.assert_array_equal(v, resumed.discriminator_state[k])


def test_too_few_images():
    images, norm, stats = _corpus(n=7)
    gen, disc = _models()
    with pytest.raises(DataError):
        train(images, gen, disc, TrainConfig(epochs=1, batch_size=4), stats)


def test_non_finite_loss_aborts():
    images, norm, stats = _corpus()
    images[:] = np.nan
    gen, disc = _models()
    with pytest.raises(ComputeError):
        train(images, gen, disc, TrainConfig(epochs=1, batch_size=4), stats,
              real_series=norm)


def test_mmd_reference_defaults_to_image_diagonals():
    # D1 (training series) and D3 (series scored against) are the same set
    images, norm, stats = _corpus()
    gen, disc = _models()
    _, log_a = train(images, gen, disc, TrainConfig(epochs=1, batch_size=4), stats)
    gen, disc = _models()
    decoded = diag_series(torch.as_tensor(images), 3).double().numpy()
    _, log_b = train(images, gen, disc, TrainConfig(epochs=1, batch_size=4), stats,
                     real_series=decoded)
    assert log_a.mmd == log_b.mmd


def test_trainlog_jsonl_round_trip(tmp_path):
    log = TrainLog()
    log.append(1, 1.5, 0.7, 0.4, 2.0)
    log.append(2, 1.2, 0.9, 0.3, 2.1)
    log.write_jsonl(tmp_path / "t.jsonl")
    assert TrainLog.read_jsonl(tmp_path / "t.jsonl").records == log.records
