"""Individual loss terms. Every function returns a scalar :class:`Node`.

Targets (previous-model outputs, stored logits) enter as plain arrays and are
wrapped as constants, so gradients only reach the current model.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cirlab.domain.autodiff import (
    Node,
    add,
    constant,
    log_softmax,
    matmul,
    mean,
    normalize_rows,
    pick,
    relu,
    repeat_columns,
    scale,
    softmax,
    sub,
    sum_sq,
    take_columns,
    total,
    transpose,
)
from cirlab.domain.losses.schemas import GramInput, GramPair
from cirlab.domain.nn.schemas import ROTATION_CLASSES
from cirlab.lib.exceptions import ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

    from cirlab.domain.losses.schemas import LossSchedule

__all__ = (
    "ace_loss",
    "alpha",
    "beta",
    "der_loss",
    "feature_kd_loss",
    "gram_pair",
    "instance_logit_kd_loss",
    "logit_constraint_loss",
    "logit_kd_loss",
    "ssl_rotation_loss",
    "zero",
)


def zero() -> Node:
    return constant(0.0)


def alpha(schedule: LossSchedule, t: int) -> float:
    if t < 0:
        msg = f"task index must be non-negative, got {t}"
        raise ValueError(msg)
    if not schedule.dynamic_ssl:
        return schedule.c
    return schedule.c * schedule.omega**t


def beta(schedule: LossSchedule, t: int) -> float:
    if t < 0:
        msg = f"task index must be non-negative, got {t}"
        raise ValueError(msg)
    return schedule.beta_slope * t


def _labels(labels: ArrayLike) -> NDArray[np.int64]:
    return np.asarray(labels, dtype=np.int64).reshape(-1)


def _cross_entropy(logits: Node, targets: NDArray[np.int64]) -> Node:
    return scale(mean(pick(log_softmax(logits), targets)), -1.0)


def ace_loss(logits: Node, labels: ArrayLike, classes_in_batch: Iterable[int]) -> Node:
    """Cross-entropy normalized only over the classes present in the batch.

    Columns outside ``classes_in_batch`` take no part in the softmax and
    receive zero gradient.

    Raises:
        ValueError: a label is not one of ``classes_in_batch``.
    """
    targets = _labels(labels)
    columns = np.asarray(sorted(set(classes_in_batch)), dtype=np.int64)
    missing = np.setdiff1d(targets, columns)
    if missing.size:
        msg = f"labels {missing.tolist()} are not among the batch classes {columns.tolist()}"
        raise ValueError(msg)
    return _cross_entropy(take_columns(logits, columns), np.searchsorted(columns, targets))


def ssl_rotation_loss(rotation_logits: Node, rotation_labels: ArrayLike) -> Node:
    targets = _labels(rotation_labels)
    if targets.size and (targets.min() < 0 or targets.max() >= ROTATION_CLASSES):
        msg = f"rotation labels must lie in [0, {ROTATION_CLASSES}), got {targets.tolist()}"
        raise ValueError(msg)
    return _cross_entropy(rotation_logits, targets)


def _gram_rows(logits: Node, source: GramInput) -> Node:
    match source:
        case "logits":
            return logits
        case "probabilities":
            return softmax(logits)
        case "unit-rows":
            return normalize_rows(logits)
    msg = f"unknown Gram input {source!r}"
    raise ValueError(msg)


def gram_pair(logits: Node, *, source: GramInput = "logits") -> GramPair:
    """Instance Gram ``l·lᵀ`` and class Gram ``lᵀ·l`` of a logit batch.

    ``source`` maps each row first: raw logits, softmax probabilities, or
    unit-norm rows.
    """
    source_rows = _gram_rows(logits, source)
    flipped = transpose(source_rows)
    return GramPair(instance_gram=matmul(source_rows, flipped), class_gram=matmul(flipped, source_rows))


def _check_same(op: str, current: Node, target: NDArray[np.float64]) -> None:
    if tuple(target.shape) != current.shape:
        raise ShapeMismatchError(op, current.shape, tuple(target.shape))


def logit_kd_loss(
    curr_logits: Node,
    prev_logits_list: Sequence[NDArray[np.float64]],
    *,
    source: GramInput = "logits",
) -> Node:
    """Correlation distillation against every previous model.

    ``(1/B)·Σ_k ‖G − G_k‖² + (1/C)·Σ_k ‖Mc − Mc_k‖²`` with squared Frobenius
    norms over the instance and class Grams. Both sides go through the same
    ``source`` mapping, see :func:`gram_pair`.
    """
    if not prev_logits_list:
        return zero()
    batch, num_classes = curr_logits.shape
    current = gram_pair(curr_logits, source=source)
    instance_term: Node = zero()
    class_term: Node = zero()
    for previous in prev_logits_list:
        _check_same("logit_kd_loss", curr_logits, previous)
        target = gram_pair(constant(previous), source=source)
        instance_term = add(instance_term, sum_sq(sub(current.instance_gram, target.instance_gram)))
        class_term = add(class_term, sum_sq(sub(current.class_gram, target.class_gram)))
    return add(scale(instance_term, 1.0 / batch), scale(class_term, 1.0 / num_classes))


def instance_logit_kd_loss(curr_logits: Node, prev_logits_list: Sequence[NDArray[np.float64]]) -> Node:
    """Row-by-row logit matching, ``(1/B)·Σ_k ‖l − l_k‖²``."""
    if not prev_logits_list:
        return zero()
    loss: Node = zero()
    for previous in prev_logits_list:
        _check_same("instance_logit_kd_loss", curr_logits, previous)
        loss = add(loss, sum_sq(sub(curr_logits, constant(previous))))
    return scale(loss, 1.0 / curr_logits.shape[0])


def feature_kd_loss(curr_features: Node, target_features: NDArray[np.float64]) -> Node:
    """Mean over the batch of the squared L2 distance between feature rows."""
    _check_same("feature_kd_loss", curr_features, target_features)
    if curr_features.shape[0] == 0:
        return zero()
    return scale(sum_sq(sub(curr_features, constant(target_features))), 1.0 / curr_features.shape[0])


def logit_constraint_loss(
    logits: Node,
    labels: ArrayLike,
    seen_classes: Iterable[int],
    margin: float = 0.0,
) -> Node:
    """Hinge keeping not-yet-seen class logits below the ground-truth logit.

    ``mean_i Σ_{j unseen} max(0, l_ij − l_i,y_i + margin)``
    """
    targets = _labels(labels)
    seen = set(seen_classes)
    outside = sorted(set(targets.tolist()) - seen)
    if outside:
        msg = f"labels {outside} are not among the seen classes"
        raise ValueError(msg)
    batch, num_classes = logits.shape
    unseen = [c for c in range(num_classes) if c not in seen]
    if not unseen or batch == 0:
        return zero()
    truth = repeat_columns(pick(logits, targets), len(unseen))
    gaps = sub(take_columns(logits, unseen), truth)
    if margin:
        gaps = add(gaps, constant(np.full(gaps.shape, margin)))
    return scale(total(relu(gaps)), 1.0 / batch)


def der_loss(replay_logits_now: Node | None, stored_logits: NDArray[np.float64]) -> Node:
    """Mean squared error between current head outputs and stored logits."""
    if replay_logits_now is None or stored_logits.shape[0] == 0:
        return zero()
    _check_same("der_loss", replay_logits_now, stored_logits)
    return scale(sum_sq(sub(replay_logits_now, constant(stored_logits))), 1.0 / stored_logits.size)
