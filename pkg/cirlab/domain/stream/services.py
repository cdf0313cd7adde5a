from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.stream.images import SyntheticImages
from cirlab.domain.stream.schemas import EvalSet, Experience
from cirlab.lib.exceptions import ConfigurationError

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from cirlab.domain.stream.etl import ImageStore
    from cirlab.domain.stream.images import ImageSource
    from cirlab.domain.stream.schemas import StreamConfig

__all__ = ("draw_class_sets", "generate_stream", "make_eval_set")

logger = structlog.get_logger()

# spawn keys that keep class schedules, training instances and test instances apart
_SCHEDULE_KEY = 1
_TRAIN_KEY = 2
_EVAL_KEY = 3
_SEED_BOUND = 2**63 - 1


def draw_class_sets(config: StreamConfig) -> list[tuple[int, ...]]:
    """Choose the classes of every experience.

    Each slot repeats a seen class with probability ``repetition_probability``
    and otherwise takes the next unseen class while any remain. Once the
    slots left in the stream equal the classes never seen, unseen classes are
    forced so that every labeled class appears at least once. Classes within
    one experience are distinct.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_SCHEDULE_KEY,)))
    unseen = [int(c) for c in rng.permutation(config.labeled_classes)]
    seen: list[int] = []
    class_sets: list[tuple[int, ...]] = []
    for index in range(config.num_experiences):
        chosen: list[int] = []
        for slot in range(config.classes_per_exp):
            slots_left = (config.num_experiences - index) * config.classes_per_exp - slot
            candidates = [c for c in seen if c not in chosen]
            if unseen and (len(unseen) >= slots_left or not candidates):
                take_seen = False
            elif not unseen:
                take_seen = True
            else:
                take_seen = bool(rng.random() < config.repetition_probability)
            if take_seen:
                chosen.append(candidates[int(rng.integers(len(candidates)))])
            else:
                chosen.append(unseen.pop(0))
        seen.extend(c for c in chosen if c not in seen)
        class_sets.append(tuple(chosen))
    return class_sets


def _unlabeled_classes(
    config: StreamConfig,
    present: NDArray[np.int64],
    rng: np.random.Generator,
) -> NDArray[np.int64]:
    match config.unlabeled_scenario:
        case "same-experience":
            return rng.choice(present, size=config.unlabeled_per_exp)
        case "in-stream":
            return rng.integers(0, config.labeled_classes, size=config.unlabeled_per_exp)
        case "random-any":
            return rng.integers(0, config.total_classes, size=config.unlabeled_per_exp)
    msg = f"unknown unlabeled scenario {config.unlabeled_scenario!r}"
    raise ConfigurationError(detail=msg)


def _render(source: ImageSource, classes: NDArray[np.int64], rng: np.random.Generator) -> NDArray[np.float64]:
    seeds = rng.integers(0, _SEED_BOUND, size=classes.shape[0])
    images = np.empty((classes.shape[0], source.side, source.side), dtype=np.float64)
    for row, (class_id, instance_seed) in enumerate(zip(classes, seeds, strict=True)):
        images[row] = source.image(int(class_id), int(instance_seed))
    return images


def _check_source(config: StreamConfig, source: ImageSource) -> None:
    if source.side != config.side:
        raise ConfigurationError(detail=f"image source side {source.side} does not match stream side {config.side}")
    num_classes = getattr(source, "num_classes", None)
    if num_classes is not None and num_classes < config.total_classes:
        raise ConfigurationError(
            detail=f"dataset has {num_classes} classes, stream needs total_classes={config.total_classes}",
        )


def generate_stream(config: StreamConfig, source: ImageSource | None = None) -> list[Experience]:
    """Build every experience of the stream, deterministically from ``config.seed``.

    Args:
        config: stream shape.
        source: where images come from; synthetic by default, or an ingested
            :class:`~cirlab.domain.stream.etl.ImageStore`.

    Returns:
        ``num_experiences`` experiences in stream order.

    Raises:
        ConfigurationError: the configuration is infeasible, or the image
            source does not fit it.
    """
    class_sets = draw_class_sets(config)
    images = source if source is not None else SyntheticImages(side=config.side)
    _check_source(config, images)
    experiences: list[Experience] = []
    for index, class_set in enumerate(class_sets):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_TRAIN_KEY, index)))
        labels = rng.permutation(np.resize(np.asarray(class_set, dtype=np.int64), config.labeled_per_exp))
        present = np.unique(labels)
        hidden = _unlabeled_classes(config, present, rng).astype(np.int64)
        experiences.append(
            Experience(
                index=index,
                labeled_images=_render(images, labels, rng),
                labels=labels.astype(np.int64),
                unlabeled_images=_render(images, hidden, rng),
                class_set=class_set,
                _unlabeled_truth=hidden,
            ),
        )
    logger.debug(
        "Stream generated",
        experiences=len(experiences),
        repeats=config.repeats,
        scenario=config.unlabeled_scenario,
    )
    return experiences


def make_eval_set(config: StreamConfig, per_class: int, holdout: ImageStore | None = None) -> EvalSet:
    """Held-out samples of every labeled class.

    Synthetic test images use instance seeds from their own spawn key, so
    they never coincide with a training draw. With an ingested dataset the
    held-out split is used instead.

    Raises:
        ConfigurationError: ``per_class`` is not positive.
    """
    if per_class < 1:
        raise ConfigurationError(detail=f"test_per_class must be positive, got {per_class}")
    if holdout is not None:
        return holdout.eval_set(range(config.labeled_classes))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_EVAL_KEY,)))
    labels = np.repeat(np.arange(config.labeled_classes, dtype=np.int64), per_class)
    return EvalSet(images=_render(SyntheticImages(side=config.side), labels, rng), labels=labels)
