"""Traffic-flow imputation: daily series encoded as Gramian angular summation
field images, a DCGAN trained per sensor cluster, and latent-space search to
fill missing readings."""
from gasfgan.data import CorruptionSpec, DailySeries, SensorDataset
from gasfgan.gasf import PreprocessStats, decode, encode, preprocess
from gasfgan.impute import LatentSearchConfig, find_latent, impute_batch
from gasfgan.metrics import mae, mre, rmse
from gasfgan.model import (DiscriminatorSpec, GeneratorSpec, ModelCheckpoint,
                           load_checkpoint, save_checkpoint)
from gasfgan.train import TrainConfig, TrainLog

__version__ = "0.1.0"

__all__ = [
    "CorruptionSpec", "DailySeries", "SensorDataset", "PreprocessStats", "decode",
    "encode", "preprocess", "LatentSearchConfig", "find_latent",
    "impute_batch", "mae", "mre", "rmse", "DiscriminatorSpec", "GeneratorSpec",
    "ModelCheckpoint", "load_checkpoint", "save_checkpoint", "TrainConfig",
    "TrainLog",
]
