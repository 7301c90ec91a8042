import datetime as dt

import numpy as np
import pytest
import torch
from hypothesis import settings

from gasfgan.data import DailySeries
from gasfgan.gasf import PreprocessStats
from gasfgan.model import (DiscriminatorSpec, GeneratorSpec, ModelCheckpoint,
                           build_discriminator, build_generator)

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

T_SMALL = 72
PAD = 3
SIDE = T_SMALL + 2 * PAD


def tiny_specs(latent_dim=4):
    return (GeneratorSpec(latent_dim=latent_dim, channel_schedule=(16, 8), output_size=SIDE),
            DiscriminatorSpec(input_size=SIDE, channel_schedule=(8, 16)))


def make_series(values, sensor_id="s1", day=dt.date(2013, 1, 2), mask=None):
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(len(values), dtype=np.uint8)
    return DailySeries(sensor_id, day, values, np.asarray(mask, dtype=np.uint8))


@pytest.fixture
def untrained_checkpoint():
    gspec, dspec = tiny_specs()
    gen = build_generator(gspec, seed=0)
    disc = build_discriminator(dspec, seed=0)
    stats = PreprocessStats(vmin=0.0, vmax=float(np.log(300.0)), pad=PAD)
    return ModelCheckpoint.from_models(gen, disc, stats)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


# one "PASS|FAIL <criterion>: <detail>" line per acceptance criterion
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
