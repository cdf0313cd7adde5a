from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from cirlab.lib.schema import FrozenStruct

if TYPE_CHECKING:
    from cirlab.domain.autodiff import Node

CONV_KERNEL = 3
ROTATION_CLASSES = 4


class NetworkConfig(FrozenStruct):
    """User-facing network knobs; the input side and class count come from the stream."""

    hidden_sizes: tuple[int, ...] = (64, 64)
    use_conv: bool = False
    conv_channels: int = 4


class ModelConfig(FrozenStruct):
    side: int = 16
    num_classes: int = 12
    hidden_sizes: tuple[int, ...] = (64, 64)
    use_conv: bool = False
    conv_channels: int = 4

    @classmethod
    def build(cls, network: NetworkConfig, side: int, num_classes: int) -> ModelConfig:
        return cls(
            side=side,
            num_classes=num_classes,
            hidden_sizes=tuple(network.hidden_sizes),
            use_conv=network.use_conv,
            conv_channels=network.conv_channels,
        )

    @property
    def feature_dim(self) -> int:
        return self.hidden_sizes[-1]

    @property
    def patch_count(self) -> int:
        return (self.side - CONV_KERNEL + 1) ** 2

    @property
    def encoder_input_dim(self) -> int:
        if self.use_conv:
            return self.patch_count * self.conv_channels
        return self.side * self.side


@dataclass(frozen=True)
class ForwardOutput:
    features: Node
    """batch × feature_dim"""
    logits: Node
    """batch × C"""
    rotation_logits: Node
    """batch × 4"""

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]
