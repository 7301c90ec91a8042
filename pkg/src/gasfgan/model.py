"""Deep-convolutional generator/discriminator and the checkpoint archive."""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from gasfgan._archive import read_archive, write_archive
from gasfgan.errors import CheckpointCorruptError, CheckpointVersionError, ConfigError
from gasfgan.gasf import PreprocessStats

CHECKPOINT_SCHEMA_VERSION = 1
_PROB_EPS = 1e-6


@dataclass(frozen=True)
class GeneratorSpec:
    latent_dim: int = 100
    channel_schedule: tuple = (512, 256, 128, 64)
    output_size: int = 294
    seed_size: int | None = None  # None: smallest size that reaches output_size
    kernel_size: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if not self.channel_schedule or min(self.channel_schedule) < 1:
            raise ConfigError("generator needs at least one up-sampling stage")
        if self.output_size < 1:
            raise ConfigError("output_size must be >= 1")
        if self.full_size < self.output_size:
            raise ConfigError(
                f"seed {self.seed} doubled {len(self.channel_schedule)} times gives "
                f"{self.full_size} < output_size {self.output_size}")

    @property
    def seed(self) -> int:
        if self.seed_size is not None:
            return self.seed_size
        return math.ceil(self.output_size / 2 ** len(self.channel_schedule))

    @property
    def full_size(self) -> int:
        return self.seed * 2 ** len(self.channel_schedule)


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_size: int = 294
    channel_schedule: tuple = (64, 128, 256, 512)
    kernel_size: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        if not self.channel_schedule or min(self.channel_schedule) < 1:
            raise ConfigError("discriminator needs at least one down-sampling stage")
        if self.final_size < 1:
            raise ConfigError(
                f"input {self.input_size} is too small for "
                f"{len(self.channel_schedule)} stride-2 stages")

    @property
    def final_size(self) -> int:
        s = self.input_size
        for _ in self.channel_schedule:
            s //= 2
        return s


class Generator(nn.Module):
    """z -> (batch, side, side) image in (-1, 1).

    A linear projection to a ``seed x seed`` feature map, then one stride-2
    transposed convolution per schedule entry, each doubling the side. The
    last stage emits one channel through tanh and is center-cropped to
    ``output_size``. Every layer but the output has batch norm.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.channel_schedule
        s = spec.seed
        self.project = nn.Linear(spec.latent_dim, ch[0] * s * s)
        self.project_bn = nn.BatchNorm2d(ch[0])
        k = spec.kernel_size
        pad = (k - 2) // 2
        layers = []
        for i, c_in in enumerate(ch):
            last = i == len(ch) - 1
            c_out = 1 if last else ch[i + 1]
            layers.append(nn.ConvTranspose2d(c_in, c_out, k, stride=2, padding=pad))
            if not last:
                layers.append(nn.BatchNorm2d(c_out))
                layers.append(nn.LeakyReLU(spec.leaky_slope))
        self.up = nn.Sequential(*layers)
        self.act = nn.LeakyReLU(spec.leaky_slope)

    def forward(self, z):
        spec = self.spec
        h = self.project(z).view(-1, spec.channel_schedule[0], spec.seed, spec.seed)
        h = self.act(self.project_bn(h))
        h = self.up(h)
        off = (h.shape[-1] - spec.output_size) // 2
        h = h[:, 0, off:off + spec.output_size, off:off + spec.output_size]
        return torch.tanh(h)


class Discriminator(nn.Module):
    """image -> probability that it is real.

    ``logits`` is what training uses; ``forward`` returns probabilities kept
    inside ``[1e-6, 1 - 1e-6]`` so they never reach exactly 0 or 1.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        pad = (k - 2) // 2
        layers = []
        c_in = 1
        for i, c_out in enumerate(spec.channel_schedule):
            layers.append(nn.Conv2d(c_in, c_out, k, stride=2, padding=pad))
            if i > 0:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.LeakyReLU(spec.leaky_slope))
            c_in = c_out
        self.down = nn.Sequential(*layers)
        self.head = nn.Linear(c_in * spec.final_size ** 2, 1)

    def logits(self, x):
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.spec.input_size or x.shape[-2] != self.spec.input_size:
            raise ConfigError(
                f"discriminator expects {self.spec.input_size}x{self.spec.input_size} "
                f"input, got {tuple(x.shape[-2:])}")
        h = self.down(x.unsqueeze(1) if x.dim() == 3 else x)
        return self.head(h.flatten(1)).squeeze(1)

    def forward(self, x):
        return torch.sigmoid(self.logits(x)).clamp(_PROB_EPS, 1 - _PROB_EPS)


def _init_weights(module):
    # DCGAN initialization: N(0, 0.02) conv weights, N(1, 0.02) BN scale
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def _build(cls, spec, seed):
    if seed is None:
        m = cls(spec)
        m.apply(_init_weights)
        return m
    # seeded builds leave the global torch RNG untouched
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        m = cls(spec)
        m.apply(_init_weights)
    return m


def build_generator(spec: GeneratorSpec, seed: int | None = None) -> Generator:
    return _build(Generator, spec, seed)


def build_discriminator(spec: DiscriminatorSpec, seed: int | None = None) -> Discriminator:
    return _build(Discriminator, spec, seed)


@dataclass
class ModelCheckpoint:
    generator_state: dict
    discriminator_state: dict
    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    stats: PreprocessStats
    train_config: dict = field(default_factory=dict)
    cluster_id: int | str | None = None
    day_class: str | None = None
    epoch: int = 0
    log: list = field(default_factory=list)
    # optimizer/RNG state for resuming, opaque torch.save bytes
    resume_state: bytes | None = None

    @classmethod
    def from_models(cls, gen, disc, stats, **kw):
        return cls(_state_to_numpy(gen.state_dict()), _state_to_numpy(disc.state_dict()),
                   gen.spec, disc.spec, stats, **kw)

    def generator(self, dtype=torch.float32) -> Generator:
        g = Generator(self.generator_spec)
        g.load_state_dict(_state_from_numpy(self.generator_state))
        return g.to(dtype).eval()

    def discriminator(self) -> Discriminator:
        d = Discriminator(self.discriminator_spec)
        d.load_state_dict(_state_from_numpy(self.discriminator_state))
        return d.eval()


def _state_to_numpy(state):
    return {k: v.detach().cpu().numpy().copy() for k, v in state.items()}


def _state_from_numpy(state):
    return {k: torch.from_numpy(np.array(v)) for k, v in state.items()}


def save_checkpoint(ckpt: ModelCheckpoint, path):
    """Zip archive: ``manifest.json``, one ``.npy`` per tensor, optional resume blob.

    Written to a temporary sibling first and renamed, so an interrupted save
    never clobbers the previous checkpoint.
    """
    from pathlib import Path

    path = Path(path)
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": "gasfgan_checkpoint",
        "generator_spec": asdict(ckpt.generator_spec),
        "discriminator_spec": asdict(ckpt.discriminator_spec),
        "stats": ckpt.stats.to_dict(),
        "train_config": ckpt.train_config,
        "cluster_id": ckpt.cluster_id,
        "day_class": ckpt.day_class,
        "epoch": ckpt.epoch,
        "log": ckpt.log,
        "generator_params": sorted(ckpt.generator_state),
        "discriminator_params": sorted(ckpt.discriminator_state),
    }
    arrays = {f"generator/{k}": v for k, v in ckpt.generator_state.items()}
    arrays.update({f"discriminator/{k}": v for k, v in ckpt.discriminator_state.items()})
    blobs = {"resume.pt": ckpt.resume_state} if ckpt.resume_state else {}
    tmp = path.with_name(path.name + ".tmp")
    write_archive(tmp, manifest, arrays, blobs)
    tmp.replace(path)


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        manifest, arrays, blobs = read_archive(path)
    except (zipfile.BadZipFile, KeyError, EOFError, json.JSONDecodeError,
            ValueError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CheckpointCorruptError(f"{path}: unreadable checkpoint ({exc})") from exc
    version = manifest.get("schema_version")
    if manifest.get("kind") != "gasfgan_checkpoint":
        raise CheckpointCorruptError(f"{path}: not a model checkpoint")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint schema {version} is incompatible with "
            f"{CHECKPOINT_SCHEMA_VERSION}")
    try:
        gen_state = {k: arrays[f"generator/{k}"] for k in manifest["generator_params"]}
        disc_state = {k: arrays[f"discriminator/{k}"]
                      for k in manifest["discriminator_params"]}
    except KeyError as exc:
        raise CheckpointCorruptError(f"{path}: missing tensor {exc}") from exc
    return ModelCheckpoint(
        gen_state, disc_state,
        GeneratorSpec(**manifest["generator_spec"]),
        DiscriminatorSpec(**manifest["discriminator_spec"]),
        PreprocessStats.from_dict(manifest["stats"]),
        train_config=manifest["train_config"],
        cluster_id=manifest["cluster_id"],
        day_class=manifest["day_class"],
        epoch=manifest["epoch"],
        log=manifest["log"],
        resume_state=blobs.get("resume.pt"),
    )


def pack_resume_state(**objs) -> bytes:
    buf = io.BytesIO()
    torch.save(objs, buf)
    return buf.getvalue()


def unpack_resume_state(blob: bytes) -> dict:
    return torch.load(io.BytesIO(blob), weights_only=False)
