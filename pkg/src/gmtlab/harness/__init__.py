"""Scenario configuration, orchestration and reporting."""

from .config import ConfigError, ScenarioConfig, apply_env, load_config, parse_config
from .report import Check, VerificationReport, emit_report
from .scenarios import SCENARIOS, UnknownScenarioError, build_flow, run_scenario

__all__ = ["Check", "ConfigError", "SCENARIOS", "ScenarioConfig", "UnknownScenarioError",
           "VerificationReport", "apply_env", "build_flow", "emit_report", "load_config",
           "parse_config", "run_scenario"]
