from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import FrozenStruct

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from cirlab.domain.autodiff import Node

LogitKDTarget = Literal["per-model-sum", "confidence-composite", "instance"]
GramInput = Literal["logits", "probabilities", "unit-rows"]
AceMask = Literal["per-source", "union"]

TERM_NAMES = ("ace", "ssl", "lc", "der", "feature_kd", "logit_kd")


class LossSchedule(FrozenStruct):
    """Scalar weights of the composite loss.

    ``alpha(t) = c * omega**t`` weights the rotation loss and scales the
    labeled weight to ``1 - 0.1 * alpha(t)``; ``beta(t) = beta_slope * t``
    weights feature distillation.
    """

    c: float = 0.5
    omega: float = 0.95
    gamma: float = 0.1
    """logit-constraint weight"""
    eta: float = 0.4
    """replay (DER) weight"""
    beta_slope: float = 0.002
    delta: float = 0.1
    """logit-distillation weight"""
    lc_margin: float = 0.0
    dynamic_ssl: bool = True
    """When false the rotation weight stays at ``c`` for every experience."""
    logit_kd_target: LogitKDTarget = "per-model-sum"
    gram_input: GramInput = "probabilities"
    """What the correlation Grams are built from, see :func:`~cirlab.domain.losses.terms.gram_pair`."""
    ace_mask: AceMask = "per-source"
    """
    ``per-source`` masks fresh rows to the labeled-batch classes and replayed
    rows to the replay-batch classes; ``union`` masks both to their union.
    """

    def validate(self) -> None:
        if not 0.0 < self.omega < 1.0:
            raise ConfigurationError(detail=f"schedule.omega must lie in (0, 1), got {self.omega}")
        for name in ("c", "gamma", "eta", "beta_slope", "delta", "lc_margin"):
            value = getattr(self, name)
            if value < 0 or not np.isfinite(value):
                raise ConfigurationError(detail=f"schedule.{name} must be a finite non-negative number, got {value}")


@dataclass(frozen=True)
class GramPair:
    instance_gram: Node
    """B × B, ``l·lᵀ``"""
    class_gram: Node
    """C × C, ``lᵀ·l``"""


@dataclass(frozen=True)
class TermWeights:
    ace: float = 1.0
    ssl: float = 0.0
    lc: float = 0.0
    der: float = 0.0
    feature_kd: float = 0.0
    logit_kd: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERM_NAMES}


@dataclass(frozen=True, eq=False)
class LabeledInputs:
    logits: Node
    labels: NDArray[np.int64]


@dataclass(frozen=True, eq=False)
class ReplayInputs:
    """Classifier outputs on stored features next to the logits stored with them."""

    logits: Node
    labels: NDArray[np.int64]
    stored_logits: NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True, eq=False)
class UnlabeledInputs:
    features: Node
    logits: Node
    rotation_logits: Node
    rotation_labels: NDArray[np.int64]


@dataclass(eq=False)
class CompositeLoss:
    total: Node
    breakdown: dict[str, float] = field(default_factory=dict)
    """Weighted value of every term, plus ``total``."""

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.total.value).all())
