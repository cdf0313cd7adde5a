from __future__ import annotations

import msgspec

from cirlab.domain.buffer.schemas import FLOAT_BUDGET, BufferConfig
from cirlab.domain.losses.schemas import LossSchedule
from cirlab.domain.nn.schemas import ModelConfig, NetworkConfig
from cirlab.domain.pool.schemas import PoolConfig
from cirlab.domain.stream.schemas import StreamConfig
from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import BaseStruct, FrozenStruct

AUXILIARY_FLAGS = (
    "use_ssl",
    "use_feature_kd",
    "use_logit_kd",
    "use_lc",
    "use_der",
    "use_ema",
    "use_multi_model",
    "use_ensemble",
)


class AblationFlags(FrozenStruct):
    """Switches for every component beyond masked cross-entropy; any subset is valid."""

    use_ssl: bool = True
    use_feature_kd: bool = True
    use_logit_kd: bool = True
    use_lc: bool = True
    use_der: bool = True
    """Enables the buffer: replay inside ACE and the DER term."""
    use_ema: bool = True
    use_multi_model: bool = True
    """Off caps the pool at a single snapshot."""
    use_ensemble: bool = True

    @classmethod
    def none(cls) -> AblationFlags:
        return cls(**dict.fromkeys(AUXILIARY_FLAGS, False))


class RunConfig(FrozenStruct):
    stream: StreamConfig = msgspec.field(default_factory=StreamConfig)
    schedule: LossSchedule = msgspec.field(default_factory=LossSchedule)
    network: NetworkConfig = msgspec.field(default_factory=NetworkConfig)
    pool: PoolConfig = msgspec.field(default_factory=PoolConfig)
    buffer: BufferConfig = msgspec.field(default_factory=BufferConfig)
    flags: AblationFlags = msgspec.field(default_factory=AblationFlags)
    labeled_batch: int = 32
    unlabeled_batch: int = 25
    epochs: int = 10
    lr: float = 2e-3
    seed: int = 0
    test_per_class: int = 32
    data_path: str = ""
    """CIRD dataset file; empty selects synthetic images."""
    checkpoint_every_experience: bool = False

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.build(self.network, side=self.stream.side, num_classes=self.stream.labeled_classes)

    @property
    def pool_size(self) -> int:
        return self.pool.max_size if self.flags.use_multi_model else 1

    def validate(self) -> None:
        """Check every cross-field constraint.

        Raises:
            ConfigurationError: the first violated constraint.
        """
        self.stream.validate()
        self.schedule.validate()
        self.pool.validate()
        self.buffer.validate()
        if self.labeled_batch < 1 or self.unlabeled_batch < 1:
            raise ConfigurationError(detail="labeled_batch and unlabeled_batch must be at least 1")
        if self.epochs < 1:
            raise ConfigurationError(detail=f"epochs must be at least 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigurationError(detail=f"lr must be positive, got {self.lr}")
        if self.test_per_class < 1:
            raise ConfigurationError(detail=f"test_per_class must be at least 1, got {self.test_per_class}")
        if not self.network.hidden_sizes or min(self.network.hidden_sizes) < 1:
            raise ConfigurationError(detail="network.hidden_sizes needs at least one positive width")
        if self.network.use_conv and (self.stream.side < 3 or self.network.conv_channels < 1):
            raise ConfigurationError(detail="the convolution front-end needs side >= 3 and conv_channels >= 1")
        cost = self.model_config.feature_dim + self.stream.labeled_classes + 1
        if cost > FLOAT_BUDGET:
            raise ConfigurationError(
                detail=(
                    f"exemplar would cost {cost} floats (feature_dim + classes + 1), "
                    f"over the {FLOAT_BUDGET}-float budget"
                ),
            )


class ExperienceMetrics(BaseStruct):
    index: int
    accuracy: float
    """Accuracy on the full test set after this experience."""
    seen_classes: int
    present_classes: list[int]
    steps: int
    alpha: float
    beta: float
    pool_size: int
    buffer_size: int
    mean_terms: dict[str, float]


class RunMetrics(BaseStruct):
    run_name: str
    preset: str
    seed: int
    experiences: list[ExperienceMetrics]
    accuracy_matrix: list[list[float]]
    """Row ``i`` holds accuracy on the classes of experiences ``0..i`` after experience ``i``."""
    final_accuracy: float
    average_forgetting: float
    loss_trace: dict[str, list[float]]
    wall_clock: list[float]
    """Seconds per experience; excluded from the CSV so it stays reproducible."""
