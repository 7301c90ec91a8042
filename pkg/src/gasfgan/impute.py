"""Latent-space search imputation.

For a corrupted day, gradient descent on the generator input ``z`` (weights
frozen) minimizes the mean absolute gap between the decoded synthetic day and
the observed entries; the best-scoring synthetic day then fills the gaps.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from gasfgan.data import DailySeries
from gasfgan.errors import ComputeError, ConfigError, DataError, UnsupportedInputError
from gasfgan.gasf import PreprocessStats, inverse_preprocess, normalize
from gasfgan.model import ModelCheckpoint
from gasfgan.train import diag_series


@dataclass(frozen=True)
class LatentSearchConfig:
    iterations: int = 200
    step_size: float = 10.0
    restarts: int = 3
    # step size is multiplied by this after every update; 1.0 keeps it constant
    step_decay: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigError("iterations and restarts must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if not 0 < self.step_decay <= 1:
            raise ConfigError("step_decay must lie in (0, 1]")


@dataclass
class ImputationResult:
    imputed: DailySeries
    z_best: np.ndarray
    loss_best: float
    iterations_used: int
    restart_index: int
    input_mask: np.ndarray
    synthetic: np.ndarray  # decoded raw-domain synthetic day
    restart_losses: list = field(default_factory=list)


@dataclass
class ImputationFailure:
    index: int
    sensor_id: str
    day: object
    error: Exception


def _target(corrupted: DailySeries, stats: PreprocessStats):
    if corrupted.n_observed == 0:
        raise UnsupportedInputError(
            f"{corrupted.sensor_id} {corrupted.day}: every entry is missing; "
            f"latent search needs at least one observed point")
    return normalize(corrupted.values, stats), corrupted.mask.astype(np.float64)


def _loss_rows(z, generator, target, mask, pad):
    """Per-row masked L1 loss for a batch of latent vectors."""
    synth = diag_series(generator(z), pad)
    resid = (synth - target).abs() * mask
    return resid.sum(-1) / mask.sum()


def _tensors(generator, target, mask):
    dtype = next(generator.parameters()).dtype
    return (torch.as_tensor(target, dtype=dtype), torch.as_tensor(mask, dtype=dtype),
            dtype)


def masked_loss(z, corrupted: DailySeries, generator, stats: PreprocessStats) -> float:
    """Mean absolute error between the decoded ``generator(z)`` day and the
    observed entries of ``corrupted``, in the normalized [0, 1] domain."""
    return masked_loss_and_grad(z, corrupted, generator, stats, grad=False)[0]


def masked_loss_and_grad(z, corrupted, generator, stats, grad=True):
    target, mask = _target(corrupted, stats)
    t, m, dtype = _tensors(generator, target, mask)
    zt = torch.as_tensor(np.asarray(z), dtype=dtype).reshape(1, -1).clone()
    zt.requires_grad_(grad)
    generator.eval()
    with torch.set_grad_enabled(grad):
        loss = _loss_rows(zt, generator, t, m, stats.pad)[0]
    if not grad:
        return float(loss), None
    (g,) = torch.autograd.grad(loss, zt)
    return float(loss.detach()), g[0].double().numpy()


def search_latent(generator, target, mask, pad, cfg: LatentSearchConfig):
    """Run all restarts side by side; returns per-restart best (z, loss, iter).

    Generator weights are frozen (no parameter gradients are taken). A restart
    whose loss or gradient turns non-finite is frozen and reported as failed.
    """
    t, m, dtype = _tensors(generator, target, mask)
    latent = generator.spec.latent_dim
    rng = np.random.default_rng(cfg.seed)
    z = torch.as_tensor(rng.standard_normal((cfg.restarts, latent)), dtype=dtype)
    generator.eval()
    for p in generator.parameters():
        p.requires_grad_(False)
    try:
        best_loss = np.full(cfg.restarts, np.inf)
        best_z = z.detach().clone()
        best_iter = np.zeros(cfg.restarts, dtype=int)
        alive = np.ones(cfg.restarts, dtype=bool)
        alpha = cfg.step_size
        for it in range(cfg.iterations + 1):
            z.requires_grad_(True)
            losses = _loss_rows(z, generator, t, m, pad)
            last = it == cfg.iterations
            if not last:
                (grad,) = torch.autograd.grad(losses.sum(), z)
            lv = losses.detach().double().numpy()
            with torch.no_grad():
                for r in np.flatnonzero(alive):
                    ok = math.isfinite(lv[r]) and (
                        last or bool(torch.isfinite(grad[r]).all()))
                    if not ok:
                        alive[r] = False
                        continue
                    if lv[r] < best_loss[r]:
                        best_loss[r] = lv[r]
                        best_z[r] = z[r]
                        best_iter[r] = it
                if last or not alive.any():
                    break
                step = alpha * grad
                step[torch.as_tensor(~alive)] = 0.0
                z = (z - step).detach()
                alpha *= cfg.step_decay
    finally:
        for p in generator.parameters():
            p.requires_grad_(True)
    return best_z.double().numpy(), best_loss, best_iter, alive


def find_latent(corrupted: DailySeries, checkpoint: ModelCheckpoint,
                cfg: LatentSearchConfig = LatentSearchConfig(), generator=None):
    """Best latent vector across restarts and iterations.

    Returns ``(z_best, loss_best)``; see :func:`impute` for the full record.
    """
    z, loss, *_ = _find_latent(corrupted, checkpoint, cfg, generator)
    return z, loss


def _find_latent(corrupted, checkpoint, cfg, generator=None):
    stats = checkpoint.stats
    if generator is None:
        generator = checkpoint.generator()
    target, mask = _target(corrupted, stats)
    zs, losses, iters, alive = search_latent(generator, target, mask, stats.pad, cfg)
    finite = np.isfinite(losses)
    if not finite.any():
        raise ComputeError(f"{corrupted.sensor_id} {corrupted.day}: all "
                           f"{cfg.restarts} restarts diverged")
    r = int(np.argmin(np.where(finite, losses, np.inf)))
    return zs[r], float(losses[r]), int(iters[r]), r, losses.tolist(), generator


def impute(corrupted: DailySeries, checkpoint: ModelCheckpoint,
           cfg: LatentSearchConfig = LatentSearchConfig(), generator=None
           ) -> ImputationResult:
    """Fill the gaps of ``corrupted`` from the closest synthetic day.

    Observed entries pass through unchanged; missing entries take the decoded
    synthetic day mapped back to flow counts.
    """
    z, loss, it, r, restart_losses, generator = _find_latent(
        corrupted, checkpoint, cfg, generator)
    stats = checkpoint.stats
    with torch.no_grad():
        zt = torch.as_tensor(z, dtype=next(generator.parameters()).dtype)[None]
        norm = diag_series(generator(zt), stats.pad)[0].double().numpy()
    synth = inverse_preprocess(norm, stats)
    observed = corrupted.mask == 1
    values = np.where(observed, corrupted.values, synth)
    imputed = DailySeries(corrupted.sensor_id, corrupted.day, values,
                          np.ones(corrupted.T, dtype=np.uint8), truth=corrupted.truth)
    return ImputationResult(imputed, z, loss, it, r, corrupted.mask.copy(), synth,
                            restart_losses)


def impute_batch(samples, checkpoint: ModelCheckpoint,
                 cfg: LatentSearchConfig = LatentSearchConfig(), seeds=None,
                 workers: int = 1):
    """Impute each sample independently, preserving order.

    Sample ``i`` is searched with seed ``seeds[i]`` (default ``cfg.seed + i``),
    so results do not depend on batching or ``workers``. A failing sample
    yields an :class:`ImputationFailure` in its slot instead of aborting.
    """
    samples = list(samples)
    if not samples:
        raise DataError("impute_batch needs at least one sample")
    if seeds is None:
        seeds = [cfg.seed + i for i in range(len(samples))]
    if len(seeds) != len(samples):
        raise DataError("one seed per sample required")

    def run(i):
        sample = samples[i]
        sample_cfg = LatentSearchConfig(cfg.iterations, cfg.step_size, cfg.restarts,
                                        cfg.step_decay, int(seeds[i]))
        try:
            # a private generator per call keeps worker threads independent
            return impute(sample, checkpoint, sample_cfg)
        except (DataError, ComputeError) as exc:
            return ImputationFailure(i, sample.sensor_id, sample.day, exc)

    if workers <= 1:
        return [run(i) for i in range(len(samples))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(samples))))


def write_results_csv(results, path):
    """One row per (sample, slot): sensor_id, day, t, observed_flag, value, source."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_id", "day", "t", "observed_flag", "value", "source"])
        for res in results:
            if isinstance(res, ImputationFailure):
                continue
            s = res.imputed
            for t in range(s.T):
                obs = int(res.input_mask[t])
                w.writerow([s.sensor_id, s.day.isoformat(), t, obs,
                            repr(float(s.values[t])), "observed" if obs else "imputed"])


def results_summary(results) -> dict:
    ok = [r for r in results if not isinstance(r, ImputationFailure)]
    failed = [r for r in results if isinstance(r, ImputationFailure)]
    return {
        "count": len(results),
        "failed": [{"index": f.index, "sensor_id": f.sensor_id, "day": str(f.day),
                    "error": str(f.error)} for f in failed],
        "samples": [{"sensor_id": r.imputed.sensor_id, "day": r.imputed.day.isoformat(),
                     "loss_best": r.loss_best, "iterations": r.iterations_used,
                     "restart_index": r.restart_index,
                     "restart_losses": r.restart_losses} for r in ok],
    }


def write_results_json(results, path):
    with open(path, "w") as fh:
        json.dump(results_summary(results), fh, indent=2)
