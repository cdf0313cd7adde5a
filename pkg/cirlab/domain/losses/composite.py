from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cirlab.domain.autodiff import Node, add, concat_rows, scale
from cirlab.domain.losses.schemas import TERM_NAMES, CompositeLoss, TermWeights
from cirlab.domain.losses.terms import (
    ace_loss,
    alpha,
    beta,
    der_loss,
    feature_kd_loss,
    instance_logit_kd_loss,
    logit_constraint_loss,
    logit_kd_loss,
    ssl_rotation_loss,
    zero,
)

if TYPE_CHECKING:
    from collections.abc import Iterable

    from cirlab.domain.losses.schemas import LabeledInputs, LossSchedule, ReplayInputs, UnlabeledInputs
    from cirlab.domain.pool.schemas import PoolTargets

__all__ = ("final_loss", "term_weights")


def term_weights(
    schedule: LossSchedule,
    t: int,
    *,
    use_ssl: bool = True,
    use_lc: bool = True,
    use_der: bool = True,
    use_feature_kd: bool = True,
    use_logit_kd: bool = True,
) -> TermWeights:
    """Resolve the composite-loss weights for experience ``t``.

    A disabled term gets weight 0; with rotation loss disabled ``alpha`` is 0,
    so the labeled term keeps weight exactly 1.
    """
    a = alpha(schedule, t) if use_ssl else 0.0
    return TermWeights(
        ace=1.0 - 0.1 * a,
        ssl=a,
        lc=schedule.gamma if use_lc else 0.0,
        der=schedule.eta if use_der else 0.0,
        feature_kd=beta(schedule, t) if use_feature_kd else 0.0,
        logit_kd=schedule.delta if use_logit_kd else 0.0,
    )


def _labeled_ace(labeled: LabeledInputs, replay: ReplayInputs | None, schedule: LossSchedule) -> Node:
    fresh = ace_loss(labeled.logits, labeled.labels, set(labeled.labels.tolist()))
    if replay is None or len(replay) == 0:
        return fresh
    if schedule.ace_mask == "union":
        labels = np.concatenate([labeled.labels, replay.labels])
        return ace_loss(concat_rows(labeled.logits, replay.logits), labels, set(labels.tolist()))
    # row-weighted, so the result is the mean over all rows
    replayed = ace_loss(replay.logits, replay.labels, set(replay.labels.tolist()))
    n_fresh, n_replay = len(labeled.labels), len(replay)
    n_rows = n_fresh + n_replay
    return add(scale(fresh, n_fresh / n_rows), scale(replayed, n_replay / n_rows))


def _logit_kd(unlabeled: UnlabeledInputs, targets: PoolTargets, schedule: LossSchedule) -> Node:
    match schedule.logit_kd_target:
        case "per-model-sum":
            return logit_kd_loss(unlabeled.logits, targets.logit_batches, source=schedule.gram_input)
        case "confidence-composite":
            return logit_kd_loss(
                unlabeled.logits,
                [targets.logit_targets],
                source=schedule.gram_input,
            )
        case "instance":
            return instance_logit_kd_loss(unlabeled.logits, targets.logit_batches)
    msg = f"unknown logit_kd_target {schedule.logit_kd_target!r}"
    raise ValueError(msg)


def final_loss(
    labeled: LabeledInputs,
    unlabeled: UnlabeledInputs | None,
    replay: ReplayInputs | None,
    pool_targets: PoolTargets | None,
    weights: TermWeights,
    *,
    schedule: LossSchedule,
    seen_classes: Iterable[int],
) -> CompositeLoss:
    """Compose the weighted training objective.

    ``w_ace·ACE(labeled, replay) + w_ssl·SSL + w_lc·LC + w_der·DER
    + w_fkd·featureKD + w_lkd·logitKD``. A term whose weight is 0, or whose
    inputs are absent (no unlabeled batch, empty replay, empty pool), is
    never built and reports 0. ACE masks each row source to its own batch
    classes unless ``schedule.ace_mask`` is ``union``.

    Args:
        labeled: current logits on the labeled batch and its labels.
        unlabeled: current outputs on the rotated unlabeled batch.
        replay: classifier outputs on replayed features and their stored logits.
        pool_targets: previous-model targets for the unlabeled batch.
        weights: resolved term weights, see :func:`term_weights`.
        schedule: margin and logit-distillation options.
        seen_classes: every class seen so far in the stream.

    Returns:
        The differentiable total and the weighted value of every term.
    """
    terms: dict[str, Node] = {"ace": _labeled_ace(labeled, replay, schedule)}
    if weights.ssl and unlabeled is not None:
        terms["ssl"] = ssl_rotation_loss(unlabeled.rotation_logits, unlabeled.rotation_labels)
    if weights.lc:
        terms["lc"] = logit_constraint_loss(labeled.logits, labeled.labels, seen_classes, margin=schedule.lc_margin)
    if weights.der and replay is not None and len(replay):
        terms["der"] = der_loss(replay.logits, replay.stored_logits)
    if unlabeled is not None and pool_targets is not None and not pool_targets.is_empty:
        if weights.feature_kd:
            terms["feature_kd"] = feature_kd_loss(unlabeled.features, pool_targets.feature_targets)
        if weights.logit_kd:
            terms["logit_kd"] = _logit_kd(unlabeled, pool_targets, schedule)

    scales = weights.as_dict()
    loss: Node | None = None
    breakdown = dict.fromkeys(TERM_NAMES, 0.0)
    for name, term in terms.items():
        weighted = term if scales[name] == 1.0 else scale(term, scales[name])
        breakdown[name] = weighted.item()
        loss = weighted if loss is None else add(loss, weighted)
    total = loss if loss is not None else zero()
    breakdown["total"] = total.item()
    return CompositeLoss(total=total, breakdown=breakdown)
