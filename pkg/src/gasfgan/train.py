"""Adversarial training with label smoothing/flipping and MMD monitoring."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from gasfgan.errors import ComputeError, ConfigError, DataError
from gasfgan.gasf import PreprocessStats
from gasfgan.model import ModelCheckpoint, pack_resume_state, unpack_resume_state

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    betas: tuple = (0.5, 0.999)
    epochs: int = 50
    batch_size: int = 32
    pos_label_range: tuple = (0.8, 1.1)
    neg_label_range: tuple = (0.0, 0.3)
    flip_fraction: float = 0.10
    d_steps: int = 1
    generator_loss: str = "non_saturating"  # or "minimax" (literal log(1 - D(G(z))))
    mmd_bandwidths: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.pos_label_range = tuple(self.pos_label_range)
        self.neg_label_range = tuple(self.neg_label_range)
        if self.mmd_bandwidths is not None:
            self.mmd_bandwidths = tuple(self.mmd_bandwidths)
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ConfigError("flip_fraction must lie in [0, 1]")
        for name in ("pos_label_range", "neg_label_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ConfigError(f"{name} must satisfy low < high")
        if self.epochs < 0 or self.batch_size < 2 or self.d_steps < 1:
            raise ConfigError("epochs >= 0, batch_size >= 2 and d_steps >= 1 required")
        if self.generator_loss not in ("non_saturating", "minimax"):
            raise ConfigError(f"unknown generator_loss {self.generator_loss!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)  # epoch -> (n, S, S) sample images

    def append(self, epoch, d_loss, g_loss, mmd, seconds):
        self.records.append({"epoch": epoch, "d_loss": d_loss, "g_loss": g_loss,
                             "mmd": mmd, "seconds": seconds})

    @property
    def mmd(self):
        return [r["mmd"] for r in self.records]

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def noisy_labels(batch_size: int, cfg: TrainConfig, rng=None):
    """Soft targets for real and fake samples, with an exact-count flip.

    Positives are uniform on ``pos_label_range`` and negatives on
    ``neg_label_range``; then ``round(flip_fraction * batch_size)`` randomly
    chosen positions swap their positive and negative labels.
    """
    rng = np.random.default_rng(rng)
    pos = rng.uniform(*cfg.pos_label_range, size=batch_size)
    neg = rng.uniform(*cfg.neg_label_range, size=batch_size)
    n_flip = int(math.floor(cfg.flip_fraction * batch_size + 0.5))
    if n_flip:
        idx = rng.choice(batch_size, size=n_flip, replace=False)
        pos[idx], neg[idx] = neg[idx].copy(), pos[idx].copy()
    return pos, neg


def _sq_dists(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_bandwidth(x, y=None) -> float:
    """sigma with ``2 sigma^2`` equal to the median pairwise squared distance."""
    pooled = x if y is None else np.vstack([x, y])
    d = _sq_dists(pooled, pooled)[np.triu_indices(len(pooled), 1)]
    med = float(np.median(d)) if d.size else 0.0
    return math.sqrt(med / 2.0) if med > 0 else 1.0


def rbf_kernel(a, b, bandwidths):
    d = _sq_dists(a, b)
    return sum(np.exp(-d / (2.0 * s * s)) for s in bandwidths) / len(bandwidths)


def mmd_score(real, synth, bandwidths=None) -> float:
    """Square root of the kernel two-sample statistic between two sets of series.

    ``mean K(real, real) - 2 mean K(real, synth) + mean K(synth, synth)`` with
    the RBF kernel averaged over ``bandwidths`` (median heuristic when None).
    Slightly negative brackets from rounding clamp to 0.
    """
    x = np.atleast_2d(np.asarray(real, dtype=np.float64))
    y = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise DataError("mmd_score needs non-empty sets")
    if x.shape[1] != y.shape[1]:
        raise DataError(f"series length mismatch: {x.shape[1]} vs {y.shape[1]}")
    if bandwidths is None:
        bandwidths = [median_bandwidth(x, y)]
    bracket = (rbf_kernel(x, x, bandwidths).mean()
               - 2.0 * rbf_kernel(x, y, bandwidths).mean()
               + rbf_kernel(y, y, bandwidths).mean())
    return math.sqrt(max(bracket, 0.0))


def diag_series(images, pad: int):
    """Differentiable diagonal decode: (N, S, S) -> (N, S - 2*pad) in [0, 1]."""
    d = torch.diagonal(images, dim1=-2, dim2=-1).clamp(-1.0, 1.0)
    x = torch.sqrt(((d + 1.0) / 2.0).clamp_min(1e-12))
    return x[..., pad:x.shape[-1] - pad] if pad else x


@torch.no_grad()
def sample_series(gen, n: int, pad: int, generator=None) -> np.ndarray:
    was_training = gen.training
    gen.eval()
    z = torch.randn(n, gen.spec.latent_dim, generator=generator)
    out = diag_series(gen(z), pad).double().numpy()
    gen.train(was_training)
    return out


def _check_finite(epoch, batch, **losses):
    bad = {k: v for k, v in losses.items() if not math.isfinite(v)}
    if bad:
        raise ComputeError(f"non-finite loss at epoch {epoch}, batch {batch}: {losses}")


def generator_loss(logits, kind: str = "non_saturating"):
    if kind == "non_saturating":
        return F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))
    # log(1 - sigmoid(l)) == -softplus(l)
    return -F.softplus(logits).mean()


def discriminator_step(disc, d_opt, real, fake, pos, neg):
    """One update of the discriminator; ``fake`` is detached so G is untouched."""
    d_opt.zero_grad()
    loss = (F.binary_cross_entropy_with_logits(disc.logits(real), pos)
            + F.binary_cross_entropy_with_logits(disc.logits(fake.detach()), neg))
    loss.backward()
    d_opt.step()
    return loss


def generator_step(disc, g_opt, d_opt, fake, kind="non_saturating"):
    """One update of the generator through a fixed discriminator."""
    g_opt.zero_grad()
    loss = generator_loss(disc.logits(fake), kind)
    loss.backward()
    g_opt.step()
    # gradients that flowed into D during the G step are discarded
    d_opt.zero_grad()
    return loss


def train(real_images, gen, disc, cfg: TrainConfig, stats: PreprocessStats,
          real_series=None, resume: ModelCheckpoint | None = None,
          on_epoch=None, sample_every: int = 0, meta=None):
    """Alternate discriminator and generator updates for ``cfg.epochs`` epochs.

    ``real_images`` is ``(N, S, S)`` (already smoothed); ``real_series`` the
    matching unpadded normalized series used for MMD, decoded from the image
    diagonals when omitted. ``on_epoch(checkpoint, log)`` runs after every
    epoch, which is where callers persist periodic checkpoints.

    Returns ``(checkpoint, log)``.
    """
    images = torch.as_tensor(np.asarray(real_images), dtype=torch.float32)
    n = len(images)
    if n == 0:
        raise DataError("no training images")
    if n < 2 * cfg.batch_size:
        raise DataError(f"need at least {2 * cfg.batch_size} images, got {n}")
    if real_series is None:
        real_series = diag_series(images, stats.pad).double().numpy()
    real_series = np.asarray(real_series, dtype=np.float64)
    bandwidths = cfg.mmd_bandwidths or (median_bandwidth(real_series),)
    meta = dict(meta or {})

    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    torch_rng = torch.Generator().manual_seed(cfg.seed)
    mmd_rng = torch.Generator().manual_seed(cfg.seed + 1)
    label_rng = np.random.default_rng(cfg.seed)

    trainlog = TrainLog()
    start_epoch = 0
    if resume is not None:
        gen.load_state_dict(resume.generator().state_dict())
        disc.load_state_dict(resume.discriminator().state_dict())
        trainlog.records = list(resume.log)
        start_epoch = resume.epoch
        if resume.resume_state:
            st = unpack_resume_state(resume.resume_state)
            g_opt.load_state_dict(st["g_opt"])
            d_opt.load_state_dict(st["d_opt"])
            torch_rng.set_state(st["torch_rng"])
            mmd_rng.set_state(st["mmd_rng"])
            label_rng.bit_generator.state = st["label_rng"]

    def snapshot(epoch):
        resume_blob = pack_resume_state(
            g_opt=g_opt.state_dict(), d_opt=d_opt.state_dict(),
            torch_rng=torch_rng.get_state(), mmd_rng=mmd_rng.get_state(),
            label_rng=label_rng.bit_generator.state)
        return ModelCheckpoint.from_models(
            gen, disc, stats, train_config=cfg.to_dict(), epoch=epoch,
            log=list(trainlog.records), resume_state=resume_blob, **meta)

    bs = cfg.batch_size
    latent = gen.spec.latent_dim
    gen.train()
    disc.train()
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = torch.randperm(n, generator=torch_rng)
        d_sum = g_sum = 0.0
        n_batches = n // bs
        for b in range(n_batches):
            real = images[perm[b * bs:(b + 1) * bs]]

            for _ in range(cfg.d_steps):
                pos, neg = noisy_labels(bs, cfg, label_rng)
                z = torch.randn(bs, latent, generator=torch_rng)
                fake = gen(z)
                d_loss = discriminator_step(disc, d_opt, real, fake,
                                            torch.as_tensor(pos, dtype=torch.float32),
                                            torch.as_tensor(neg, dtype=torch.float32))
            g_loss = generator_step(disc, g_opt, d_opt, fake, cfg.generator_loss)

            _check_finite(epoch, b, d_loss=d_loss.item(), g_loss=g_loss.item())
            d_sum += d_loss.item()
            g_sum += g_loss.item()

        synth = sample_series(gen, len(real_series), stats.pad, mmd_rng)
        mmd = mmd_score(real_series, synth, bandwidths)
        seconds = time.perf_counter() - t0
        trainlog.append(epoch, d_sum / n_batches, g_sum / n_batches, mmd, seconds)
        if sample_every and epoch % sample_every == 0:
            with torch.no_grad():
                gen.eval()
                z = torch.randn(4, latent, generator=torch.Generator().manual_seed(cfg.seed))
                trainlog.samples[epoch] = gen(z).numpy()
                gen.train()
        log.info("epoch %d d_loss %.4f g_loss %.4f mmd %.4f (%.1fs)", epoch,
                 d_sum / n_batches, g_sum / n_batches, mmd, seconds)
        if on_epoch is not None:
            on_epoch(snapshot(epoch), trainlog)

    gen.eval()
    disc.eval()
    return snapshot(max(cfg.epochs, start_epoch)), trainlog
