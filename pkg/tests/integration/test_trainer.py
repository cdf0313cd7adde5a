from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from cirlab.domain.buffer import MemoryBuffer
from cirlab.domain.nn import NetworkConfig, load_params
from cirlab.domain.pool import ModelPool
from cirlab.domain.stream import StreamConfig
from cirlab.domain.trainer import (
    AblationFlags,
    RunConfig,
    Trainer,
    load_data,
    run_finetune,
    run_stream,
    write_run_artifacts,
)
from cirlab.domain.trainer.evaluation import single_model
from cirlab.lib.schema import apply_overrides

if TYPE_CHECKING:
    from collections.abc import Callable
    from pathlib import Path

    from cirlab.domain.nn import ModelParams

pytestmark = pytest.mark.slow

Trace = list[dict[str, np.ndarray]]


def _recorder(trace: Trace) -> Callable[[int, ModelParams], None]:
    def on_step(step: int, params: ModelParams) -> None:
        trace.append({name: params[name].copy() for name in params})

    return on_step


def test_seeded_runs_write_identical_metrics(small_run_config: RunConfig, tmp_path: Path) -> None:
    written = []
    for name in ("a", "b"):
        directory = tmp_path / name
        directory.mkdir()
        written.append(write_run_artifacts(directory, small_run_config, run_stream(small_run_config)))
    assert written[0]["metrics"].read_bytes() == written[1]["metrics"].read_bytes()
    assert written[0]["config"].read_text() == written[1]["config"].read_text()


def test_every_flag_off_matches_plain_fine_tuning() -> None:
    config = RunConfig(
        stream=StreamConfig(
            total_classes=4,
            labeled_classes=4,
            num_experiences=10,
            labeled_per_exp=320,
            unlabeled_per_exp=16,
            classes_per_exp=2,
            side=8,
            seed=5,
        ),
        network=NetworkConfig(hidden_sizes=(8,)),
        flags=AblationFlags.none(),
        labeled_batch=32,
        epochs=1,
        test_per_class=4,
        lr=1e-3,
        seed=5,
    )
    experiences, _ = load_data(config)

    composite: Trace = []
    trainer = Trainer(config, on_step=_recorder(composite))
    for experience in experiences:
        trainer.train_experience(experience)
    reference: Trace = []
    run_finetune(config, experiences, on_step=_recorder(reference))

    assert len(composite) == len(reference) == 100
    for ours, theirs in zip(composite, reference, strict=True):
        assert all(np.array_equal(ours[name], theirs[name]) for name in ours)


def test_fine_tuning_forgets_the_first_experience() -> None:
    config = RunConfig(
        stream=StreamConfig(
            total_classes=4,
            labeled_classes=4,
            num_experiences=2,
            labeled_per_exp=64,
            unlabeled_per_exp=8,
            classes_per_exp=2,
            repetition_probability=0.0,
            side=8,
            seed=2,
        ),
        network=NetworkConfig(hidden_sizes=(32,)),
        flags=AblationFlags.none(),
        labeled_batch=16,
        epochs=5,
        lr=3e-3,
        test_per_class=16,
        seed=2,
    )
    metrics = run_stream(config)
    assert len(metrics.accuracy_matrix) == 2
    assert metrics.accuracy_matrix[1][0] < metrics.accuracy_matrix[0][0]
    assert metrics.average_forgetting > 0.0


def test_distillation_is_silent_until_the_pool_fills(small_run_config: RunConfig) -> None:
    metrics = run_stream(small_run_config)
    first, second = metrics.experiences[0], metrics.experiences[1]
    assert first.mean_terms["feature_kd"] == 0.0
    assert first.mean_terms["logit_kd"] == 0.0
    assert first.pool_size == 1
    assert second.mean_terms["logit_kd"] > 0.0
    assert [record.pool_size for record in metrics.experiences] == [1, 2, 3, 3]
    assert all(0.0 <= record.accuracy <= 1.0 for record in metrics.experiences)
    assert all(record.buffer_size <= small_run_config.buffer.capacity for record in metrics.experiences)
    assert [len(row) for row in metrics.accuracy_matrix] == [1, 2, 3, 4]


def test_rotation_off_keeps_the_labeled_weight_at_one(small_run_config: RunConfig) -> None:
    config = apply_overrides(small_run_config, {"flags.use_ssl": False})
    trainer = Trainer(config)
    for t in range(4):
        weights = trainer.weights(t)
        assert weights.ace == 1.0
        assert weights.ssl == 0.0
    metrics = run_stream(config)
    assert all(record.alpha == 0.0 for record in metrics.experiences)
    assert all(record.mean_terms["ssl"] == 0.0 for record in metrics.experiences)


def test_fixed_rotation_weight(small_run_config: RunConfig) -> None:
    config = apply_overrides(small_run_config, {"schedule.dynamic_ssl": False, "schedule.c": 0.3})
    metrics = run_stream(config)
    assert [record.alpha for record in metrics.experiences] == [0.3] * 4


def test_checkpoints_are_written_per_experience(small_run_config: RunConfig, tmp_path: Path) -> None:
    config = apply_overrides(small_run_config, {"checkpoint_every_experience": True})
    run_stream(config, checkpoint_dir=tmp_path)
    for t in range(4):
        params = load_params(tmp_path / f"model-{t:03d}.cirp", config.model_config)
        assert params.is_finite()
        assert len(ModelPool.load(tmp_path / f"pool-{t:03d}")) == min(t + 1, config.pool.max_size)
        assert len(MemoryBuffer.load(tmp_path / f"buffer-{t:03d}.cirb")) <= config.buffer.capacity


def test_ensemble_partner_predates_the_latest_experience(small_run_config: RunConfig) -> None:
    experiences, eval_set = load_data(small_run_config)
    trainer = Trainer(small_run_config)
    differing = 0
    for experience in experiences:
        trainer.train_experience(experience)
        previous = trainer.state.pool.previous()
        alone = single_model(trainer.state.params)(eval_set.images)
        combined = trainer.predictor()(eval_set.images)
        if experience.index == 0:
            assert len(previous) == 0
            np.testing.assert_array_equal(combined, alone)
            continue
        partner = previous.snapshots[-1]
        live = trainer.state.params
        assert any(not np.array_equal(partner[name], live[name]) for name in live)
        differing += int(np.count_nonzero(combined != alone))
    assert differing > 0


def test_exemplars_are_stored_during_the_last_epoch(small_run_config: RunConfig) -> None:
    config = apply_overrides(small_run_config, {"epochs": 2})
    experiences, _ = load_data(config)
    trace: Trace = []
    trainer = Trainer(config, on_step=_recorder(trace))
    trainer.train_experience(experiences[0])
    # two steps per epoch; the last epoch runs on the parameters left by steps 1 and 2
    assert len(trace) == 4
    heads = [(trace[k]["classifier.weight"], trace[k]["classifier.bias"]) for k in (1, 2)]
    assert len(trainer.state.buffer) == config.buffer.capacity
    for exemplar in trainer.state.buffer:
        assert any(np.allclose(exemplar.feature @ weight + bias, exemplar.logit) for weight, bias in heads)
