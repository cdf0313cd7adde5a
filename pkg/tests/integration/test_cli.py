from __future__ import annotations

from typing import TYPE_CHECKING

import msgspec
import pytest
import structlog
from click.testing import CliRunner

from cirlab.cli import cli
from cirlab.domain.stream import ingest_dataset

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

pytestmark = pytest.mark.slow

TINY = (
    "stream.total_classes=4",
    "stream.labeled_classes=4",
    "stream.num_experiences=2",
    "stream.classes_per_exp=2",
    "stream.labeled_per_exp=16",
    "stream.unlabeled_per_exp=8",
    "stream.side=8",
    "network.hidden_sizes=[8]",
    "labeled_batch=8",
    "unlabeled_batch=8",
    "test_per_class=4",
)


def _sets(*assignments: str) -> list[str]:
    return [arg for assignment in (*TINY, *assignments) for arg in ("--set", assignment)]


@pytest.fixture
def runner() -> Iterator[CliRunner]:
    yield CliRunner()
    # the CLI binds structlog to the runner's captured stderr
    structlog.reset_defaults()


def test_run_writes_artifacts(runner: CliRunner, tmp_path: Path) -> None:
    result = runner.invoke(cli, ["run", "--preset", "ft", "--seed", "4", "--output-dir", str(tmp_path), *_sets()])
    assert result.exit_code == 0, result.output
    directory = tmp_path / "ft-seed4"
    assert {"metrics.csv", "summary.json", "config.resolved"} <= {p.name for p in directory.iterdir()}
    summary = msgspec.json.decode((directory / "summary.json").read_bytes())
    assert summary["seed"] == 4
    assert summary["preset"] == "ft"
    assert len(summary["experiences"]) == 2
    assert "flags.use_ssl = false" in (directory / "config.resolved").read_text()
    assert len((directory / "metrics.csv").read_text().splitlines()) == 3


def test_set_overrides_reach_the_schedule(runner: CliRunner, tmp_path: Path) -> None:
    result = runner.invoke(cli, ["run", "--name", "c", "--output-dir", str(tmp_path), *_sets("schedule.c=0.25")])
    assert result.exit_code == 0, result.output
    summary = msgspec.json.decode((tmp_path / "c" / "summary.json").read_bytes())
    assert summary["experiences"][0]["alpha"] == 0.25


def test_config_file_then_preset(runner: CliRunner, tmp_path: Path) -> None:
    config = tmp_path / "lab.cfg"
    config.write_text("[schedule]\nc = 0.4\ndynamic_ssl = false\n")
    result = runner.invoke(
        cli,
        ["run", "--config", str(config), "--preset", "fixed", "--name", "f", "--output-dir", str(tmp_path), *_sets()],
    )
    assert result.exit_code == 0, result.output
    summary = msgspec.json.decode((tmp_path / "f" / "summary.json").read_bytes())
    assert [record["alpha"] for record in summary["experiences"]] == [0.4, 0.4]


def test_configuration_errors_exit_with_one(runner: CliRunner, tmp_path: Path) -> None:
    unknown = runner.invoke(cli, ["run", "--output-dir", str(tmp_path), *_sets("schedule.kappa=1")])
    assert unknown.exit_code == 1
    assert "schedule.kappa" in unknown.output

    preset = runner.invoke(cli, ["run", "--preset", "nope", "--output-dir", str(tmp_path), *_sets()])
    assert preset.exit_code == 1

    infeasible = runner.invoke(cli, ["run", "--output-dir", str(tmp_path), *_sets("stream.num_experiences=1")])
    assert infeasible.exit_code == 1

    seeds = runner.invoke(cli, ["ablate", "--table", "4", "--seeds", "one", "--output-dir", str(tmp_path)])
    assert seeds.exit_code == 1


def test_run_on_generated_data(runner: CliRunner, tmp_path: Path) -> None:
    data = tmp_path / "data" / "tiny.cird"
    generated = runner.invoke(
        cli,
        ["gen-data", "--output", str(data), "--classes", "4", "--per-class", "12", "--side", "8", "--seed", "1"],
    )
    assert generated.exit_code == 0, generated.output
    store = ingest_dataset(data)
    assert [store.count(c) for c in range(4)] == [12, 12, 12, 12]

    result = runner.invoke(
        cli,
        ["run", "--data", str(data), "--name", "d", "--output-dir", str(tmp_path), *_sets()],
    )
    assert result.exit_code == 0, result.output
    assert f"data_path = {msgspec.json.encode(str(data)).decode()}" in (tmp_path / "d" / "config.resolved").read_text()


def test_corrupt_dataset_exits_with_two(runner: CliRunner, tmp_path: Path) -> None:
    data = tmp_path / "broken.cird"
    data.write_bytes(b"CIRD\x01\x00\x00\x00")
    result = runner.invoke(cli, ["run", "--data", str(data), "--output-dir", str(tmp_path), *_sets()])
    assert result.exit_code == 2
    assert "truncated payload" in result.output


def test_gradient_check_command(runner: CliRunner) -> None:
    result = runner.invoke(cli, ["check", "gradients", "--instances", "1"])
    assert result.exit_code == 0, result.output


def test_ablation_over_one_seed(runner: CliRunner, tmp_path: Path) -> None:
    result = runner.invoke(cli, ["ablate", "--table", "4", "--seeds", "1", "--output-dir", str(tmp_path), *_sets()])
    assert result.exit_code == 0, result.output
    report = msgspec.json.decode((tmp_path / "ablate-table4" / "report.json").read_bytes())
    assert report["seeds"] == [1]
    assert [summary["preset"] for summary in report["presets"]] == ["dynamic", "fixed"]
    assert all(summary["std"] == 0.0 for summary in report["presets"])
    assert len(report["verdicts"]) == 1


def test_unexpected_errors_exit_with_two(runner: CliRunner, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def fail(*args: object, **kwargs: object) -> None:
        msg = "label 9 is not a batch class"
        raise ValueError(msg)

    monkeypatch.setattr("cirlab.domain.trainer.services.run_stream", fail)
    result = runner.invoke(cli, ["run", "--output-dir", str(tmp_path), *_sets()])
    assert result.exit_code == 2
    assert "ValueError" in result.output
    assert "not a batch class" in result.output
