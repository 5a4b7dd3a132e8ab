"""Report rendering and export."""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from regretfolio.config import settings
from regretfolio.models.schemas import (
    BracketReport,
    ComparisonRow,
    FrontierPoint,
    PortfolioSolution,
    RegretCertificate,
    SolveStatus,
)

_STATUS_STYLES = {
    SolveStatus.OPTIMAL: "green",
    SolveStatus.INFEASIBLE: "yellow",
    SolveStatus.UNBOUNDED: "yellow",
    SolveStatus.SOLVER_FAILURE: "bold red",
}


def _fmt(value: float | None) -> str:
    if value is None:
        return "-"
    return f"{value:.{settings.output_precision}g}"


def _status(status: SolveStatus) -> str:
    return f"[{_STATUS_STYLES[status]}]{status.value.upper()}[/]"


def round_floats(data: Any, digits: int | None = None) -> Any:
    """Round every finite float in a JSON-like structure to `digits` significant digits."""
    digits = settings.output_precision if digits is None else digits
    if isinstance(data, float):
        return float(f"{data:.{digits}g}") if math.isfinite(data) else data
    if isinstance(data, dict):
        return {key: round_floats(value, digits) for key, value in data.items()}
    if isinstance(data, list | tuple):
        return [round_floats(value, digits) for value in data]
    return data


def dumps(data: Any) -> str:
    return json.dumps(round_floats(data), indent=2)


def to_json(model: BaseModel) -> str:
    """JSON of a result model with floats rounded to settings.output_precision digits."""
    return dumps(model.model_dump(mode="json"))


def _weights_table(x: np.ndarray, labels: list[str] | None = None) -> Table:
    table = Table(title="Weights", show_header=True)
    table.add_column("Asset", style="bold")
    table.add_column("Weight", justify="right")
    for i, weight in enumerate(x):
        table.add_row(labels[i] if labels else str(i), _fmt(float(weight)))
    return table


def render_solution(
    solution: PortfolioSolution, console: Console | None = None, labels: list[str] | None = None
) -> None:
    if console is None:
        console = Console()

    summary = Table(show_header=False)
    summary.add_column("Metric", style="bold")
    summary.add_column("Value", justify="right")
    summary.add_row("Model", solution.variant.label)
    summary.add_row("Status", _status(solution.status))
    summary.add_row("Objective", _fmt(solution.objective))
    if solution.lifted_objective is not None:
        summary.add_row("Lifted objective", _fmt(solution.lifted_objective))
    console.print(Panel(summary, title="Portfolio"))
    if solution.x is not None:
        console.print(_weights_table(solution.x, labels))


def render_certificate(
    certificate: RegretCertificate, console: Console | None = None, labels: list[str] | None = None
) -> None:
    if console is None:
        console = Console()

    summary = Table(show_header=False)
    summary.add_column("Metric", style="bold")
    summary.add_column("Value", justify="right")
    summary.add_row("Model", certificate.variant.label)
    summary.add_row("Adversary", certificate.adversary.value)
    summary.add_row("Max regret bound", _fmt(certificate.gamma))
    summary.add_row("Bracket", f"[{_fmt(certificate.bracket[0])}, {_fmt(certificate.bracket[1])}]")
    if certificate.witness is not None:
        summary.add_row("Worst scenario", str(certificate.witness))
    console.print(Panel(summary, title="Minimum-Regret Portfolio"))
    console.print(_weights_table(certificate.x, labels))

    if certificate.regrets:
        regrets = Table(title="Regret per Scenario", show_header=True)
        regrets.add_column("Scenario", style="bold")
        regrets.add_column("Regret", justify="right")
        for i, value in enumerate(certificate.regrets):
            style = "bold" if i == certificate.witness else ""
            regrets.add_row(str(i), f"[{style}]{_fmt(value)}[/]" if style else _fmt(value))
        console.print(regrets)


def render_bracket(report: BracketReport, console: Console | None = None) -> None:
    if console is None:
        console = Console()

    table = Table(show_header=False)
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    table.add_row("Lower (sampled)", _fmt(report.lower))
    table.add_row("Upper (certified)", _fmt(report.upper))
    table.add_row("Gap", _fmt(report.gap))
    table.add_row("Assets / ellipsoid dim / inequalities", f"{report.n} / {report.k} / {report.m_g}")
    table.add_row("Samples", str(report.sample_count))
    console.print(Panel(table, title="Regret Bracket"))


def render_frontier(points: list[FrontierPoint], console: Console | None = None) -> None:
    if console is None:
        console = Console()

    table = Table(title="Efficient Frontier", show_header=True)
    table.add_column("Target return", justify="right")
    table.add_column("Risk", justify="right")
    table.add_column("Return", justify="right")
    table.add_column("Status")
    for point in points:
        table.add_row(_fmt(point.rho), _fmt(point.risk), _fmt(point.ret), _status(point.status))
    console.print(table)


def render_comparison(rows: list[ComparisonRow], console: Console | None = None) -> None:
    if console is None:
        console = Console()

    table = Table(title="Classical vs Absolute vs Relative", show_header=True)
    table.add_column("Mode", style="bold")
    table.add_column("Status")
    table.add_column("Objective", justify="right")
    table.add_column("Worst-case objective", justify="right")
    table.add_column("Max regret", justify="right")
    for row in rows:
        table.add_row(
            row.mode.value,
            _status(row.status),
            _fmt(row.objective),
            _fmt(row.worst_case_objective),
            _fmt(row.max_regret),
        )
    console.print(table)


def _to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=f"%.{settings.output_precision}g", na_rep="")


def frontier_csv(points: list[FrontierPoint]) -> str:
    """CSV with columns rho,risk,return,status; infeasible points leave risk and return empty."""
    frame = pd.DataFrame(
        {
            "rho": [p.rho for p in points],
            "risk": [p.risk for p in points],
            "return": [p.ret for p in points],
            "status": [p.status.value for p in points],
        }
    )
    return _to_csv(frame)


def comparison_csv(rows: list[ComparisonRow], labels: list[str] | None = None) -> str:
    """One row per mode, with its weights as trailing columns."""
    records: list[dict[str, Any]] = []
    for row in rows:
        record: dict[str, Any] = {
            "mode": row.mode.value,
            "status": row.status.value,
            "objective": row.objective,
            "worst_case_objective": row.worst_case_objective,
            "max_regret": row.max_regret,
        }
        if row.x is not None:
            for i, weight in enumerate(row.x):
                record[f"w_{labels[i]}" if labels else f"w_{i}"] = float(weight)
        records.append(record)
    return _to_csv(pd.DataFrame.from_records(records))
