"""Continual training loop, evaluation and run artifacts."""

from cirlab.domain.trainer.config_file import dump_config, load_run_config, parse_assignments, parse_config_text
from cirlab.domain.trainer.evaluation import average_forgetting, confusion_matrix, evaluate
from cirlab.domain.trainer.reporting import prepare_run_directory, write_run_artifacts
from cirlab.domain.trainer.schemas import AblationFlags, ExperienceMetrics, RunConfig, RunMetrics
from cirlab.domain.trainer.services import Trainer, load_data, run_finetune, run_stream

__all__ = (
    "AblationFlags",
    "ExperienceMetrics",
    "RunConfig",
    "RunMetrics",
    "Trainer",
    "average_forgetting",
    "confusion_matrix",
    "dump_config",
    "evaluate",
    "load_data",
    "load_run_config",
    "parse_assignments",
    "parse_config_text",
    "prepare_run_directory",
    "run_finetune",
    "run_stream",
    "write_run_artifacts",
)
