from __future__ import annotations

import csv
from pathlib import Path
from typing import TYPE_CHECKING

import msgspec

from cirlab.domain.losses.schemas import TERM_NAMES
from cirlab.domain.trainer.config_file import dump_config
from cirlab.lib.exceptions import ConfigurationError

if TYPE_CHECKING:
    from cirlab.domain.trainer.schemas import RunConfig, RunMetrics

__all__ = ("METRICS_COLUMNS", "prepare_run_directory", "write_run_artifacts")

METRICS_COLUMNS = (
    "experience",
    "accuracy",
    "seen_classes",
    "present_classes",
    "steps",
    "alpha",
    "beta",
    "pool_size",
    "buffer_size",
    *(f"loss_{name}" for name in (*TERM_NAMES, "total")),
)


def prepare_run_directory(root: Path, name: str) -> Path:
    """Create ``root/name``.

    Raises:
        ConfigurationError: the directory cannot be created or written.
    """
    target = root / name
    try:
        target.mkdir(parents=True, exist_ok=True)
        marker = target / ".write-check"
        marker.touch()
        marker.unlink()
    except OSError as exc:
        raise ConfigurationError(detail=f"output directory {target} is not writable: {exc.strerror}") from exc
    return target


def write_metrics_csv(path: Path, metrics: RunMetrics) -> Path:
    """One row per experience; no timing columns, so seeded runs produce identical files."""
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for record in metrics.experiences:
            writer.writerow(
                [
                    record.index,
                    repr(record.accuracy),
                    record.seen_classes,
                    " ".join(str(c) for c in record.present_classes),
                    record.steps,
                    repr(record.alpha),
                    repr(record.beta),
                    record.pool_size,
                    record.buffer_size,
                    *(repr(record.mean_terms[name]) for name in (*TERM_NAMES, "total")),
                ],
            )
    return path


def write_run_artifacts(directory: Path, config: RunConfig, metrics: RunMetrics) -> dict[str, Path]:
    directory = Path(directory)
    summary = directory / "summary.json"
    summary.write_bytes(msgspec.json.format(msgspec.json.encode(metrics)))
    resolved = directory / "config.resolved"
    resolved.write_text(dump_config(config), encoding="utf-8")
    return {
        "metrics": write_metrics_csv(directory / "metrics.csv", metrics),
        "summary": summary,
        "config": resolved,
    }
