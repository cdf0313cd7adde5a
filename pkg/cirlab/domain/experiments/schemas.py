from __future__ import annotations

from typing import Any, Literal

import msgspec

from cirlab.lib.schema import BaseStruct, FrozenStruct

Relation = Literal["lt", "le", "non-inferior", "separated"]
"""How two preset means must compare.

``lt`` strictly higher mean, ``le`` higher or equal, ``non-inferior`` within
half a pooled standard deviation below, ``separated`` higher by more than two
pooled standard deviations.
"""


class AblationPreset(FrozenStruct):
    name: str
    table: int
    """Comparison group the preset belongs to."""
    overrides: dict[str, Any] = msgspec.field(default_factory=dict)
    """Dotted keys that differ from the ``full`` configuration."""
    description: str = ""


class OrderingRule(FrozenStruct):
    lower: str
    higher: str
    relation: Relation


class PresetSummary(BaseStruct):
    preset: str
    seeds: list[int]
    final_accuracy: list[float]
    average_forgetting: list[float]
    mean: float
    std: float
    """Population standard deviation over seeds; 0 for a single seed."""


class OrderingVerdict(BaseStruct):
    lower: str
    higher: str
    relation: Relation
    margin: float
    """``mean(higher) - mean(lower)``."""
    threshold: float
    holds: bool


class AblationReport(BaseStruct):
    table: int
    seeds: list[int]
    presets: list[PresetSummary]
    verdicts: list[OrderingVerdict]

    @property
    def ordering_holds(self) -> bool:
        return all(verdict.holds for verdict in self.verdicts)


class SeedOutcome(BaseStruct):
    """Result of one (preset, seed) run as returned by a worker process."""

    preset: str
    seed: int
    final_accuracy: float = 0.0
    average_forgetting: float = 0.0
    error: str = ""


class CheckResult(BaseStruct):
    name: str
    passed: bool
    detail: str = ""


class CheckReport(BaseStruct):
    suite: str
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [result for result in self.results if not result.passed]
