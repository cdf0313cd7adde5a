from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.autodiff import backward
from cirlab.domain.buffer.schemas import Exemplar, stack_exemplars
from cirlab.domain.buffer.services import MemoryBuffer
from cirlab.domain.losses.composite import final_loss, term_weights
from cirlab.domain.losses.schemas import TERM_NAMES, LabeledInputs, ReplayInputs, UnlabeledInputs
from cirlab.domain.losses.terms import ace_loss, beta
from cirlab.domain.nn.checkpoint import save_params
from cirlab.domain.nn.model import classifier_forward, init_params, model_forward
from cirlab.domain.nn.schemas import ROTATION_CLASSES
from cirlab.domain.optim.adam import AdamState, adam_step
from cirlab.domain.pool.services import ModelPool
from cirlab.domain.stream.etl import ingest_dataset
from cirlab.domain.stream.images import rotate_image
from cirlab.domain.stream.services import generate_stream, make_eval_set
from cirlab.domain.trainer.evaluation import average_forgetting, ensemble_model, evaluate, single_model
from cirlab.domain.trainer.schemas import ExperienceMetrics, RunMetrics
from cirlab.lib.exceptions import InvariantViolationError, TrainingDivergedError
from cirlab.lib.log import experience_context, run_context

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator

    from numpy.typing import NDArray

    from cirlab.domain.losses.schemas import CompositeLoss, TermWeights
    from cirlab.domain.nn.model import ModelParams
    from cirlab.domain.pool.schemas import PoolTargets
    from cirlab.domain.stream.schemas import EvalSet, Experience
    from cirlab.domain.trainer.schemas import RunConfig

    StepCallback = Callable[[int, ModelParams], None]

__all__ = ("Trainer", "TrainingState", "load_data", "run_finetune", "run_stream")

logger = structlog.get_logger()

# spawn keys of the per-run random streams; separate streams keep the
# labeled trajectory independent of which auxiliary terms draw randomness
_INIT_KEY = 11
_ORDER_KEY = 12
_UNLABELED_KEY = 13
_ROTATION_KEY = 14
_REPLAY_KEY = 15
_BUFFER_KEY = 16


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def _batches(order: NDArray[np.int64], size: int) -> Iterator[NDArray[np.int64]]:
    for start in range(0, order.shape[0], size):
        yield order[start : start + size]


@dataclass
class TrainingState:
    params: ModelParams
    optimizer: AdamState
    pool: ModelPool
    buffer: MemoryBuffer
    seen_classes: set[int] = field(default_factory=set)
    step: int = 0
    loss_trace: dict[str, list[float]] = field(default_factory=lambda: {name: [] for name in (*TERM_NAMES, "total")})


def load_data(config: RunConfig) -> tuple[list[Experience], EvalSet]:
    """Generate the stream and its test set, from a dataset file when configured."""
    if config.data_path:
        store = ingest_dataset(config.data_path)
        train, holdout = store.split(config.test_per_class)
        return generate_stream(config.stream, source=train), make_eval_set(
            config.stream,
            config.test_per_class,
            holdout=holdout,
        )
    return generate_stream(config.stream), make_eval_set(config.stream, config.test_per_class)


class Trainer:
    """Continual training over a stream with the composite objective."""

    def __init__(
        self,
        config: RunConfig,
        *,
        checkpoint_dir: Path | None = None,
        on_step: StepCallback | None = None,
    ) -> None:
        from cirlab.lib.settings import get_settings

        config.validate()
        self.config = config
        self.flags = config.flags
        self.checkpoint_dir = checkpoint_dir
        self.on_step = on_step
        self.debug = get_settings().app.DEBUG
        self.state = TrainingState(
            params=init_params(config.model_config, seed=int(_rng(config.seed, _INIT_KEY).integers(2**63 - 1))),
            optimizer=AdamState(lr=config.lr),
            pool=ModelPool(max_size=config.pool_size, momentum=config.pool.momentum),
            buffer=MemoryBuffer(
                config.buffer.capacity,
                config.buffer.policy,
                seed=int(_rng(config.seed, _BUFFER_KEY).integers(2**63 - 1)),
            ),
        )
        self._order_rng = _rng(config.seed, _ORDER_KEY)
        self._unlabeled_rng = _rng(config.seed, _UNLABELED_KEY)
        self._rotation_rng = _rng(config.seed, _ROTATION_KEY)
        self._replay_rng = _rng(config.seed, _REPLAY_KEY)

    def weights(self, t: int) -> TermWeights:
        return term_weights(
            self.config.schedule,
            t,
            use_ssl=self.flags.use_ssl,
            use_lc=self.flags.use_lc,
            use_der=self.flags.use_der,
            use_feature_kd=self.flags.use_feature_kd,
            use_logit_kd=self.flags.use_logit_kd,
        )

    def _unlabeled_batch(self, experience: Experience) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
        pool_size = experience.unlabeled_images.shape[0]
        size = min(self.config.unlabeled_batch, pool_size)
        chosen = self._unlabeled_rng.choice(pool_size, size=size, replace=False)
        rotations = self._rotation_rng.integers(0, ROTATION_CLASSES, size=size).astype(np.int64)
        rotated = np.stack(
            [rotate_image(experience.unlabeled_images[i], int(k)) for i, k in zip(chosen, rotations, strict=True)],
        )
        return rotated, rotations

    def _step(
        self,
        experience: Experience,
        indices: NDArray[np.int64],
        weights: TermWeights,
        *,
        final_epoch: bool,
    ) -> CompositeLoss:
        state = self.state
        params = state.params
        t = experience.index
        leaves = params.leaves()
        images = experience.labeled_images[indices]
        labels = experience.labels[indices]
        labeled_out = model_forward(params, images, leaves=leaves)

        unlabeled: UnlabeledInputs | None = None
        targets: PoolTargets | None = None
        wants_kd = bool(weights.feature_kd or weights.logit_kd) and len(state.pool) > 0
        if (weights.ssl or wants_kd) and experience.unlabeled_images.shape[0]:
            rotated, rotations = self._unlabeled_batch(experience)
            unlabeled_out = model_forward(params, rotated, leaves=leaves)
            unlabeled = UnlabeledInputs(
                features=unlabeled_out.features,
                logits=unlabeled_out.logits,
                rotation_logits=unlabeled_out.rotation_logits,
                rotation_labels=rotations,
            )
            if wants_kd:
                targets = state.pool.compute_targets(rotated)

        replay: ReplayInputs | None = None
        if weights.der and len(state.buffer):
            drawn = state.buffer.sample_batch(
                self.config.labeled_batch,
                seed=int(self._replay_rng.integers(2**63 - 1)),
            )
            stacked = stack_exemplars(drawn, params.config.feature_dim, params.config.num_classes)
            replay = ReplayInputs(
                logits=classifier_forward(params, stacked.features, leaves=leaves),
                labels=stacked.labels,
                stored_logits=stacked.logits,
            )

        composite = final_loss(
            LabeledInputs(logits=labeled_out.logits, labels=labels),
            unlabeled,
            replay,
            targets,
            weights,
            schedule=self.config.schedule,
            seen_classes=state.seen_classes,
        )
        if not composite.is_finite:
            logger.error("Training diverged", step=state.step, **composite.breakdown)
            raise TrainingDivergedError(state.step, composite.breakdown)

        grads = backward(composite.total, wrt=leaves)
        adam_step(state.optimizer, params.arrays, grads)
        if self.flags.use_ema and self.config.pool.ema_cadence == "step":
            state.pool.ema_refresh_all(params)

        if final_epoch and self.flags.use_der:
            features = labeled_out.features.value
            logits = labeled_out.logits.value
            for row, label in enumerate(labels):
                state.buffer.insert(
                    Exemplar(
                        feature=features[row].copy(),
                        logit=logits[row].copy(),
                        label=int(label),
                        task_of_origin=t,
                    ),
                )
        if self.debug:
            self.check_invariants()
        return composite

    def check_invariants(self) -> None:
        state = self.state
        state.buffer.check_invariants()
        state.pool.check_invariants(state.params)
        if not state.params.is_finite():
            raise InvariantViolationError(detail=f"non-finite parameters after step {state.step}")

    def train_experience(self, experience: Experience) -> ExperienceMetrics:
        """Train on one experience, then snapshot the model into the pool.

        The experience index is the task index handed to the loss schedules.
        """
        state = self.state
        t = experience.index
        weights = self.weights(t)
        state.seen_classes.update(experience.present_classes)
        sums = dict.fromkeys((*TERM_NAMES, "total"), 0.0)
        steps = 0
        size = experience.labels.shape[0]
        for epoch in range(self.config.epochs):
            order = self._order_rng.permutation(size).astype(np.int64)
            for indices in _batches(order, self.config.labeled_batch):
                composite = self._step(experience, indices, weights, final_epoch=epoch == self.config.epochs - 1)
                for name, value in composite.breakdown.items():
                    sums[name] += value
                    state.loss_trace[name].append(value)
                steps += 1
                state.step += 1
                if self.on_step is not None:
                    self.on_step(state.step, state.params)
        if self.flags.use_ema and self.config.pool.ema_cadence == "experience":
            state.pool.ema_refresh_all(state.params)
        state.pool.push_snapshot(state.params)
        if self.config.checkpoint_every_experience and self.checkpoint_dir is not None:
            self._checkpoint(self.checkpoint_dir, t)
        return ExperienceMetrics(
            index=t,
            accuracy=0.0,
            seen_classes=len(state.seen_classes),
            present_classes=sorted(experience.present_classes),
            steps=steps,
            alpha=weights.ssl,
            beta=beta(self.config.schedule, t),
            pool_size=len(state.pool),
            buffer_size=len(state.buffer),
            mean_terms={name: value / max(steps, 1) for name, value in sums.items()},
        )

    def _checkpoint(self, target: Path, t: int) -> None:
        save_params(self.state.params, target / f"model-{t:03d}.cirp")
        self.state.pool.save(target / f"pool-{t:03d}")
        if self.flags.use_der:
            self.state.buffer.save(target / f"buffer-{t:03d}.cirb")
        logger.debug("Checkpoint written", directory=str(target), experience=t)

    def predictor(self) -> Callable[[NDArray[np.float64]], NDArray[np.int64]]:
        if self.flags.use_ensemble:
            return ensemble_model(
                self.state.params,
                self.state.pool.previous(),
                index=self.config.pool.ensemble_index,
                mode=self.config.pool.ensemble_mode,
            )
        return single_model(self.state.params)

    def evaluate(self, eval_set: EvalSet) -> float:
        return evaluate(self.predictor(), eval_set)

    def run_stream(
        self,
        experiences: list[Experience],
        eval_set: EvalSet,
        *,
        run_name: str = "run",
        preset: str = "custom",
    ) -> RunMetrics:
        """Train on every experience in order and evaluate after each one."""
        records: list[ExperienceMetrics] = []
        matrix: list[list[float]] = []
        wall_clock: list[float] = []
        logger.info("Run started", experiences=len(experiences), classes=self.config.stream.labeled_classes)
        for experience in experiences:
            started = time.perf_counter()
            with experience_context(experience.index):
                logger.debug("Experience started", classes=list(experience.class_set))
                record = self.train_experience(experience)
                predictor = self.predictor()
                record.accuracy = evaluate(predictor, eval_set)
                earlier = experiences[: experience.index + 1]
                matrix.append([evaluate(predictor, eval_set.restrict(e.present_classes)) for e in earlier])
                wall_clock.append(time.perf_counter() - started)
                logger.info(
                    "Experience finished",
                    accuracy=round(record.accuracy, 4),
                    seen_classes=record.seen_classes,
                    pool_size=record.pool_size,
                    buffer_size=record.buffer_size,
                    loss=round(record.mean_terms["total"], 6),
                )
            records.append(record)
        final = records[-1].accuracy if records else 0.0
        metrics = RunMetrics(
            run_name=run_name,
            preset=preset,
            seed=self.config.seed,
            experiences=records,
            accuracy_matrix=matrix,
            final_accuracy=final,
            average_forgetting=average_forgetting(matrix),
            loss_trace=self.state.loss_trace,
            wall_clock=wall_clock,
        )
        logger.info("Run finished", final_accuracy=round(final, 4), forgetting=round(metrics.average_forgetting, 4))
        return metrics


def run_stream(
    config: RunConfig,
    *,
    run_name: str = "run",
    preset: str = "custom",
    checkpoint_dir: Path | None = None,
    on_step: StepCallback | None = None,
) -> RunMetrics:
    """Generate the data, train over the whole stream, and report metrics."""
    config.validate()
    with run_context(run=run_name, seed=config.seed, preset=preset):
        experiences, eval_set = load_data(config)
        trainer = Trainer(config, checkpoint_dir=checkpoint_dir, on_step=on_step)
        return trainer.run_stream(experiences, eval_set, run_name=run_name, preset=preset)


def run_finetune(
    config: RunConfig,
    experiences: list[Experience],
    *,
    on_step: StepCallback | None = None,
) -> ModelParams:
    """Plain fine-tuning with masked cross-entropy, nothing else.

    Reference loop for the composite trainer with every auxiliary flag off:
    same initialization, same batch order, same optimizer.
    """
    config.validate()
    params = init_params(config.model_config, seed=int(_rng(config.seed, _INIT_KEY).integers(2**63 - 1)))
    optimizer = AdamState(lr=config.lr)
    order_rng = _rng(config.seed, _ORDER_KEY)
    step = 0
    for experience in experiences:
        for _ in range(config.epochs):
            order = order_rng.permutation(experience.labels.shape[0]).astype(np.int64)
            for indices in _batches(order, config.labeled_batch):
                leaves = params.leaves()
                labels = experience.labels[indices]
                logits = model_forward(params, experience.labeled_images[indices], leaves=leaves).logits
                loss = ace_loss(logits, labels, set(labels.tolist()))
                if not math.isfinite(loss.item()):
                    raise TrainingDivergedError(step, {"ace": loss.item()})
                adam_step(optimizer, params.arrays, backward(loss, wrt=leaves))
                step += 1
                if on_step is not None:
                    on_step(step, params)
    return params

