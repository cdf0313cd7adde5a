from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from cirlab.lib.exceptions import ConfigurationError, FloatBudgetError
from cirlab.lib.schema import FrozenStruct

if TYPE_CHECKING:
    from numpy.typing import NDArray

FLOAT_BUDGET = 1024
"""Largest number of floats one stored exemplar may occupy."""

BufferPolicy = Literal["reservoir", "class_balanced"]


class BufferConfig(FrozenStruct):
    capacity: int = 200
    policy: BufferPolicy = "reservoir"

    def validate(self) -> None:
        if self.capacity < 1:
            raise ConfigurationError(detail=f"buffer.capacity must be positive, got {self.capacity}")


@dataclass(frozen=True, eq=False)
class Exemplar:
    """A stored (feature, logit, label) triple; raw images are never kept."""

    feature: NDArray[np.float64]
    logit: NDArray[np.float64]
    label: int
    task_of_origin: int

    @property
    def float_cost(self) -> int:
        return int(self.feature.size + self.logit.size + 1)

    def check(self, budget: int = FLOAT_BUDGET) -> None:
        """Raise unless the exemplar fits ``budget`` and holds only finite values."""
        if self.float_cost > budget:
            raise FloatBudgetError(self.float_cost, budget)
        if not (np.isfinite(self.feature).all() and np.isfinite(self.logit).all()):
            msg = f"exemplar of class {self.label} holds non-finite values"
            raise ValueError(msg)


@dataclass(frozen=True, eq=False)
class ReplayBatch:
    features: NDArray[np.float64]
    logits: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def stack_exemplars(exemplars: list[Exemplar], feature_dim: int, num_classes: int) -> ReplayBatch:
    if not exemplars:
        return ReplayBatch(
            features=np.empty((0, feature_dim), dtype=np.float64),
            logits=np.empty((0, num_classes), dtype=np.float64),
            labels=np.empty(0, dtype=np.int64),
        )
    return ReplayBatch(
        features=np.stack([e.feature for e in exemplars]),
        logits=np.stack([e.logit for e in exemplars]),
        labels=np.asarray([e.label for e in exemplars], dtype=np.int64),
    )
