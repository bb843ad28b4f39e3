"""Scenario files, named experiment runners and CSV output."""

from .runner import EXPERIMENTS, ResultRow, rows_to_csv, run_experiment, subseed, write_csv
from .scenario import Scenario, ScenarioError, bundled_scenarios, load_scenario, parse_scenario

__all__ = [
    "EXPERIMENTS",
    "ResultRow",
    "Scenario",
    "ScenarioError",
    "bundled_scenarios",
    "load_scenario",
    "parse_scenario",
    "rows_to_csv",
    "run_experiment",
    "subseed",
    "write_csv",
]
