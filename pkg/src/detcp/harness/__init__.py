"""Scenario files, experiment runs, metrics and reports."""

from .report import CSV_COLUMNS, emit_report, parse_csv_report
from .runner import (FlowSource, PendulumResult, RunMetrics, RunResult, loss_sweep,
                     run_pendulum_comparison, run_scenario)
from .scenario import FlowSpec, ScenarioConfig, ScenarioError, parse_scenario, shipped_scenarios

__all__ = [
    "CSV_COLUMNS", "FlowSource", "FlowSpec", "PendulumResult", "RunMetrics", "RunResult",
    "ScenarioConfig", "ScenarioError", "emit_report", "loss_sweep", "parse_csv_report",
    "parse_scenario", "run_pendulum_comparison", "run_scenario", "shipped_scenarios",
]
