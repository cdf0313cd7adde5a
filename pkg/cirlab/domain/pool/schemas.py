from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from cirlab.domain.nn.schemas import ModelConfig
from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import BaseStruct, FrozenStruct

if TYPE_CHECKING:
    from numpy.typing import NDArray

EmaCadence = Literal["step", "experience"]
EnsembleMode = Literal["probability", "logit"]


class PoolConfig(FrozenStruct):
    max_size: int = 3
    momentum: float = 0.9
    ema_cadence: EmaCadence = "step"
    ensemble_index: int = -1
    """Snapshot that joins the current model at inference; -1 is the newest."""
    ensemble_mode: EnsembleMode = "probability"

    def validate(self) -> None:
        if self.max_size < 1:
            raise ConfigurationError(detail=f"pool.max_size must be at least 1, got {self.max_size}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigurationError(detail=f"pool.momentum must lie in [0, 1], got {self.momentum}")
        if not -self.max_size <= self.ensemble_index < self.max_size:
            raise ConfigurationError(
                detail=f"pool.ensemble_index {self.ensemble_index} is outside a pool of {self.max_size}",
            )


@dataclass(frozen=True, eq=False)
class PoolTargets:
    """Distillation targets for one unlabeled batch."""

    feature_targets: NDArray[np.float64]
    """B × F, each row from the snapshot most confident on that sample"""
    logit_targets: NDArray[np.float64]
    """B × C, selected the same way as the features"""
    logit_batches: list[NDArray[np.float64]] = field(default_factory=list)
    """Logits of every snapshot, oldest first."""
    selected_model_index: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return not self.logit_batches

    @classmethod
    def empty(cls, batch_size: int, feature_dim: int, num_classes: int) -> PoolTargets:
        return cls(
            feature_targets=np.empty((batch_size, feature_dim), dtype=np.float64),
            logit_targets=np.empty((batch_size, num_classes), dtype=np.float64),
        )


class ManifestEntry(BaseStruct):
    offset: int
    length: int


class PoolManifest(BaseStruct):
    version: int
    max_size: int
    momentum: float
    model: ModelConfig
    snapshots: list[ManifestEntry]
