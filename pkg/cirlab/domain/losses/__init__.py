"""Composite training objective and its individual terms."""

from cirlab.domain.losses.composite import final_loss, term_weights
from cirlab.domain.losses.schemas import (
    TERM_NAMES,
    CompositeLoss,
    GramPair,
    LabeledInputs,
    LossSchedule,
    ReplayInputs,
    TermWeights,
    UnlabeledInputs,
)
from cirlab.domain.losses.terms import (
    ace_loss,
    alpha,
    beta,
    der_loss,
    feature_kd_loss,
    gram_pair,
    instance_logit_kd_loss,
    logit_constraint_loss,
    logit_kd_loss,
    ssl_rotation_loss,
)

__all__ = (
    "TERM_NAMES",
    "CompositeLoss",
    "GramPair",
    "LabeledInputs",
    "LossSchedule",
    "ReplayInputs",
    "TermWeights",
    "UnlabeledInputs",
    "ace_loss",
    "alpha",
    "beta",
    "der_loss",
    "feature_kd_loss",
    "final_loss",
    "gram_pair",
    "instance_logit_kd_loss",
    "logit_constraint_loss",
    "logit_kd_loss",
    "ssl_rotation_loss",
    "term_weights",
)
