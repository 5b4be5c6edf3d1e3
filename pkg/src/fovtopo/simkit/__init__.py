"""Scenario loading, simulation runs, outputs and the command line."""

from .scenario import Scenario, ScenarioError, bundled_scenario_path, load_scenario, parse_scenario
from .simulate import RunLog, run

__all__ = ["Scenario", "ScenarioError", "RunLog", "bundled_scenario_path", "load_scenario", "parse_scenario", "run"]
