"""Run configuration: a YAML document validated up front.

Example::

    data:
      paths: [flows.csv]
      T: 288
      pad: 3
      holidays: []            # ISO dates treated as non-weekdays
    day_classes: [weekday, nonweekday]
    split_ratio: 0.8
    cluster: {k_range: [1, 10], k: null}
    model:
      generator: {latent_dim: 100, channel_schedule: [512, 256, 128, 64]}
      discriminator: {channel_schedule: [64, 128, 256, 512]}
    train: {epochs: 50, batch_size: 32, smooth_sigma: 1.0, checkpoint_every: 1}
    latent_search: {iterations: 200, step_size: 10.0, restarts: 3, step_decay: 0.95}
    mr_sweep: [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    repetitions: 25
    max_test_days: null       # cap per sensor and day class, for quick runs
    output_dir: outputs
    seed: 0

``GASFGAN_OUTPUT_ROOT`` overrides ``output_dir``; ``GASFGAN_DEVICE`` selects
the torch device (only ``cpu`` is supported).
"""
from __future__ import annotations

import datetime as dt
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from gasfgan.data import DAY_CLASSES, DEFAULT_T
from gasfgan.errors import ConfigError
from gasfgan.gasf import DEFAULT_PAD, DEFAULT_SIGMA
from gasfgan.impute import LatentSearchConfig
from gasfgan.model import DiscriminatorSpec, GeneratorSpec
from gasfgan.train import TrainConfig

DEFAULT_MR_SWEEP = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def component_seed(global_seed: int, name: str) -> int:
    """Stable per-component seed derived from the global seed and a name."""
    digest = hashlib.sha256(f"{global_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _build(cls, values, where):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class RunConfig:
    paths: list
    T: int = DEFAULT_T
    pad: int = DEFAULT_PAD
    holidays: list = field(default_factory=list)
    day_classes: tuple = DAY_CLASSES
    split_ratio: float = 0.8
    k_range: tuple = (1, 10)
    k: int | None = None
    generator: dict = field(default_factory=dict)
    discriminator: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    smooth_sigma: float = DEFAULT_SIGMA
    checkpoint_every: int = 1
    latent_search: LatentSearchConfig = field(default_factory=LatentSearchConfig)
    mr_sweep: tuple = DEFAULT_MR_SWEEP
    repetitions: int = 25
    max_test_days: int | None = None
    output_dir: Path = Path("outputs")
    seed: int = 0
    device: str = "cpu"
    base_dir: Path = Path(".")

    @property
    def image_size(self) -> int:
        return self.T + 2 * self.pad

    def generator_spec(self) -> GeneratorSpec:
        return _build(GeneratorSpec, {**self.generator, "output_size": self.image_size},
                      "model.generator")

    def discriminator_spec(self) -> DiscriminatorSpec:
        return _build(DiscriminatorSpec,
                      {**self.discriminator, "input_size": self.image_size},
                      "model.discriminator")

    def seed_for(self, name: str) -> int:
        return component_seed(self.seed, name)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self, require_data: bool = True):
        """Check everything before any compute starts."""
        if require_data:
            if not self.paths:
                raise ConfigError("data.paths is empty")
            for p in self.paths:
                if not self.resolve(p).is_file():
                    raise ConfigError(f"data path not found: {self.resolve(p)}")
        if self.T < 1 or 1440 % self.T:
            raise ConfigError(f"T={self.T} must divide 1440")
        if self.pad < 0:
            raise ConfigError("pad must be >= 0")
        for dc in self.day_classes:
            if dc not in DAY_CLASSES:
                raise ConfigError(f"unknown day class {dc!r}")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        lo, hi = self.k_range
        if not 1 <= lo <= hi:
            raise ConfigError("cluster.k_range must satisfy 1 <= low <= high")
        if self.k is not None and self.k < 1:
            raise ConfigError("cluster.k must be >= 1")
        for mr in self.mr_sweep:
            if not 0 <= mr <= 0.95:
                raise ConfigError(f"missing rate {mr} outside [0, 0.95]")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("train.checkpoint_every must be >= 1")
        if self.smooth_sigma < 0:
            raise ConfigError("train.smooth_sigma must be >= 0")
        if self.device != "cpu":
            raise ConfigError(f"device {self.device!r} is not supported; use cpu")
        self.generator_spec()
        self.discriminator_spec()
        return self

    @classmethod
    def from_dict(cls, doc, base_dir=".", env=None):
        env = os.environ if env is None else env
        doc = dict(doc or {})
        top = {"data", "day_classes", "split_ratio", "cluster", "model", "train",
               "latent_search", "mr_sweep", "repetitions", "max_test_days",
               "output_dir", "seed"}
        unknown = sorted(set(doc) - top)
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        data = dict(doc.get("data") or {})
        unknown = sorted(set(data) - {"paths", "T", "pad", "holidays"})
        if unknown:
            raise ConfigError(f"data: unknown keys {unknown}")
        cluster = dict(doc.get("cluster") or {})
        unknown = sorted(set(cluster) - {"k_range", "k"})
        if unknown:
            raise ConfigError(f"cluster: unknown keys {unknown}")
        model = dict(doc.get("model") or {})
        unknown = sorted(set(model) - {"generator", "discriminator"})
        if unknown:
            raise ConfigError(f"model: unknown keys {unknown}")
        train = dict(doc.get("train") or {})
        smooth_sigma = train.pop("smooth_sigma", DEFAULT_SIGMA)
        checkpoint_every = train.pop("checkpoint_every", 1)
        try:
            holidays = [h if isinstance(h, dt.date) else dt.date.fromisoformat(str(h))
                        for h in data.get("holidays", [])]
        except ValueError as exc:
            raise ConfigError(f"data.holidays: {exc}") from None
        output_dir = env.get("GASFGAN_OUTPUT_ROOT") or doc.get("output_dir", "outputs")
        paths = data.get("paths", [])
        if isinstance(paths, str):
            paths = [paths]
        try:
            cfg = cls(
                paths=list(paths),
                T=int(data.get("T", DEFAULT_T)),
                pad=int(data.get("pad", DEFAULT_PAD)),
                holidays=holidays,
                day_classes=tuple(doc.get("day_classes", DAY_CLASSES)),
                split_ratio=float(doc.get("split_ratio", 0.8)),
                k_range=tuple(cluster.get("k_range", (1, 10))),
                k=cluster.get("k"),
                generator=dict(model.get("generator") or {}),
                discriminator=dict(model.get("discriminator") or {}),
                train=_build(TrainConfig, train, "train"),
                smooth_sigma=float(smooth_sigma),
                checkpoint_every=int(checkpoint_every),
                latent_search=_build(LatentSearchConfig, doc.get("latent_search"),
                                     "latent_search"),
                mr_sweep=tuple(float(m) for m in doc.get("mr_sweep", DEFAULT_MR_SWEEP)),
                repetitions=int(doc.get("repetitions", 25)),
                max_test_days=doc.get("max_test_days"),
                output_dir=Path(output_dir),
                seed=int(doc.get("seed", 0)),
                device=env.get("GASFGAN_DEVICE", "cpu"),
                base_dir=Path(base_dir),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        if not cfg.output_dir.is_absolute():
            cfg.output_dir = cfg.base_dir / cfg.output_dir
        return cfg

    @classmethod
    def load(cls, path, env=None):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc, base_dir=path.parent, env=env)
