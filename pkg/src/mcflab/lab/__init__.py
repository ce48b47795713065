"""Scenario presets, run configuration, pipeline and CLI."""

from .config import RunConfig, load_config
from .pipeline import PipelineResult, run_pipeline
from .scenarios import REGISTRY, Expectation, Scenario, get_scenario, list_scenarios

__all__ = ["RunConfig", "load_config", "PipelineResult", "run_pipeline", "REGISTRY", "Expectation", "Scenario",
           "get_scenario", "list_scenarios"]
