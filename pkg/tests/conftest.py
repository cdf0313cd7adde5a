from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from cirlab.domain.buffer.schemas import BufferConfig
from cirlab.domain.nn.schemas import ModelConfig, NetworkConfig
from cirlab.domain.stream.schemas import StreamConfig
from cirlab.domain.trainer.schemas import RunConfig
from cirlab.lib import settings as app_settings

if TYPE_CHECKING:
    from collections.abc import Callable
    from pathlib import Path

    from pytest import MonkeyPatch

    from cirlab.domain.nn.model import ModelParams


@pytest.fixture(autouse=True)
def _patch_settings(monkeypatch: MonkeyPatch, tmp_path: Path) -> None:
    """Patch the settings."""

    settings = app_settings.Settings(
        app=app_settings.AppSettings(DEBUG=True, OUTPUT_ROOT=tmp_path / "out", WORKERS=1),
        log=app_settings.LogSettings(LEVEL="WARNING", FORMAT="console"),
    )

    def get_settings(dotenv_filename: str = ".env.testing") -> app_settings.Settings:
        return settings

    monkeypatch.setattr(app_settings, "get_settings", get_settings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def randomize_head(rng: np.random.Generator) -> Callable[..., ModelParams]:
    """Replace the all-zero class head of a fresh model with Gaussian weights."""

    def _randomize(params: ModelParams, spread: float = 1.0) -> ModelParams:
        head = params["classifier.weight"]
        head[...] = rng.normal(scale=spread, size=head.shape)
        return params

    return _randomize


@pytest.fixture
def small_model_config() -> ModelConfig:
    return ModelConfig(side=8, num_classes=4, hidden_sizes=(16,))


@pytest.fixture
def small_stream_config() -> StreamConfig:
    return StreamConfig(
        total_classes=6,
        labeled_classes=4,
        num_experiences=4,
        labeled_per_exp=32,
        unlabeled_per_exp=32,
        classes_per_exp=2,
        repetition_probability=0.5,
        side=8,
        seed=3,
    )


@pytest.fixture
def small_run_config(small_stream_config: StreamConfig) -> RunConfig:
    return RunConfig(
        stream=small_stream_config,
        network=NetworkConfig(hidden_sizes=(16,)),
        buffer=BufferConfig(capacity=20),
        labeled_batch=16,
        unlabeled_batch=16,
        test_per_class=8,
        seed=3,
    )
