"""Shared fixtures. The desk-scale run trains a real model once per
session (about 13 minutes) and is only built when a test asks for it,
so module-level unit runs stay fast."""

import time
from dataclasses import dataclass

import pytest

from pmrinet.network import ModelConfig, ModelParameters, init_params
from pmrinet.sampling import SamplingMask, gen_uniform_1d
from pmrinet.simdata import simulate_dataset
from pmrinet.training import TrainConfig, train


@dataclass
class DeskScaleRun:
    """One end-to-end training run at the 64x64 benchmark scale."""

    mask: SamplingMask
    params: ModelParameters
    test_records: list
    train_seconds: float


@pytest.fixture(scope="session")
def desk_scale_run():
    """Train a 4-stage model on the R=3 uniform-mask synthetic benchmark.

    50 train / 10 val / 20 test records at 64x64 with 4 coils, 100
    epochs at the default learning rate. Seeds are fixed so the run,
    and every metric derived from it, is reproducible bit for bit.
    """
    mask = gen_uniform_1d(64, 64, 3, 7, seed=0)
    train_records = simulate_dataset(50, 4, 64, 64, mask, seed=101)
    val_records = simulate_dataset(10, 4, 64, 64, mask, seed=202)
    test_records = simulate_dataset(20, 4, 64, 64, mask, seed=303)
    params = init_params(ModelConfig(stages=4))
    config = TrainConfig(epochs=100)
    started = time.perf_counter()
    params, _ = train(train_records, mask.bits, params, config,
                      val_records=val_records)
    seconds = time.perf_counter() - started
    return DeskScaleRun(mask=mask, params=params, test_records=test_records,
                        train_seconds=seconds)
