"""Ablation presets, multi-seed comparisons and correctness suites."""

from cirlab.domain.experiments.ablation import run_ablation
from cirlab.domain.experiments.checks import SUITES, run_suite
from cirlab.domain.experiments.presets import PRESETS, TABLES, apply_preset, get_preset, with_seed
from cirlab.domain.experiments.schemas import AblationPreset, AblationReport, CheckReport

__all__ = (
    "PRESETS",
    "SUITES",
    "TABLES",
    "AblationPreset",
    "AblationReport",
    "CheckReport",
    "apply_preset",
    "get_preset",
    "run_ablation",
    "run_suite",
    "with_seed",
)
