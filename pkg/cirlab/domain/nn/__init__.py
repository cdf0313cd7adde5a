"""Shared encoder with a class head and a rotation head."""

from cirlab.domain.nn.checkpoint import load_params, save_params
from cirlab.domain.nn.model import (
    ModelParams,
    classifier_forward,
    ema_blend,
    init_params,
    model_forward,
    restore,
    snapshot,
    softmax,
)
from cirlab.domain.nn.schemas import ForwardOutput, ModelConfig, NetworkConfig

__all__ = (
    "ForwardOutput",
    "ModelConfig",
    "ModelParams",
    "NetworkConfig",
    "classifier_forward",
    "ema_blend",
    "init_params",
    "load_params",
    "model_forward",
    "restore",
    "save_params",
    "snapshot",
    "softmax",
)
