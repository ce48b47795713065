"""Run configuration: INI-style sections parsed with :mod:`configparser`.

``configs/example.ini`` in the repository is a complete annotated file.
Every key is optional except ``run.scenario``; unknown sections or keys are
rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ValidationError
from ..flow import FlowParams
from .scenarios import OPERATIONS, get_scenario

OPERATION_CHOICES = OPERATIONS + ("all",)

# section -> key -> type
SCHEMA = {
    "run": {"scenario": str, "operation": str, "rng_seed": int, "output": str},
    "stability": {"margin": float, "count": int},
    "barrier": {"epsilon1": float, "safety": float, "psi_floor": float},
    "flow": {"dt_safety": float, "t_end": float, "resample_every": int, "hausdorff_tol": float,
             "meanH_tol": float, "record_every": int, "converge_records": int, "extinct_fraction": float,
             "snapshot_every": int, "max_steps": int},
    "uniqueness": {"seeds": int, "tolerance": float},
}


@dataclass
class RunConfig:
    scenario: str
    operation: str = "all"
    rng_seed: int = 0
    output: str = "runs"
    margin: float = 1e-4
    count: Optional[int] = None
    epsilon1: Optional[float] = None
    safety: float = 0.05
    psi_floor: Optional[float] = None
    flow: dict = field(default_factory=dict)
    seeds: int = 20
    uniqueness_tol: float = 1e-2
    source: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        get_scenario_or_fail(self.scenario)
        if self.operation not in OPERATION_CHOICES:
            raise ValidationError(f"run.operation: {self.operation!r} not in {', '.join(OPERATION_CHOICES)}")
        if self.rng_seed < 0:
            raise ValidationError("run.rng_seed: must be >= 0")
        if not self.margin > 0:
            raise ValidationError("stability.margin: must be positive")
        if self.count is not None and self.count < 8:
            raise ValidationError("stability.count: must be at least 8")
        if self.epsilon1 is not None and not self.epsilon1 > 0:
            raise ValidationError("barrier.epsilon1: must be positive")
        if not 0 <= self.safety < 1:
            raise ValidationError("barrier.safety: must lie in [0, 1)")
        if self.psi_floor is not None and not self.psi_floor > 0:
            raise ValidationError("barrier.psi_floor: must be positive")
        if self.seeds < 1:
            raise ValidationError("uniqueness.seeds: must be >= 1")
        if not self.uniqueness_tol > 0:
            raise ValidationError("uniqueness.tolerance: must be positive")
        try:
            FlowParams(**self.flow)
        except ValidationError as exc:
            raise ValidationError(f"flow.{exc}") from None

    def flow_params(self, defaults: Optional[dict] = None) -> FlowParams:
        return FlowParams(**{**(defaults or {}), **self.flow})

    def settings(self, scenario) -> dict:
        """Resolved values that expectations may be conditioned on."""
        return {"epsilon1": self.epsilon1 if self.epsilon1 is not None else scenario.epsilon1,
                "seeds": self.seeds}


def get_scenario_or_fail(name):
    try:
        return get_scenario(name)
    except KeyError as exc:
        raise ValidationError(f"run.scenario: {exc.args[0]}") from None


_TARGET = {
    ("run", "scenario"): "scenario", ("run", "operation"): "operation", ("run", "rng_seed"): "rng_seed",
    ("run", "output"): "output", ("stability", "margin"): "margin", ("stability", "count"): "count",
    ("barrier", "epsilon1"): "epsilon1", ("barrier", "safety"): "safety", ("barrier", "psi_floor"): "psi_floor",
    ("uniqueness", "seeds"): "seeds", ("uniqueness", "tolerance"): "uniqueness_tol",
}


def _convert(section, key, raw):
    kind = SCHEMA[section][key]
    try:
        return kind(raw.strip())
    except ValueError:
        raise ValidationError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _resolve_key(key: str):
    if "." in key:
        section, name = key.split(".", 1)
        if section in SCHEMA and name in SCHEMA[section]:
            return section, name
        raise ValidationError(f"unknown key {key!r}")
    hits = [s for s in SCHEMA if key in SCHEMA[s]]
    if len(hits) != 1:
        raise ValidationError(f"unknown or ambiguous key {key!r}; use section.key")
    return hits[0], key


def parse_overrides(items) -> dict:
    """``["epsilon1=0.5", "flow.t_end=3"]`` -> ``{(section, key): raw}``."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[_resolve_key(k.strip())] = v
    return out


def build_config(values: dict, source: Optional[str] = None) -> RunConfig:
    """``values`` maps ``(section, key)`` to raw strings."""
    kwargs, flow = {}, {}
    for (section, key), raw in values.items():
        val = _convert(section, key, raw)
        if section == "flow":
            flow[key] = val
        else:
            kwargs[_TARGET[(section, key)]] = val
    if "scenario" not in kwargs:
        raise ValidationError("run.scenario: required")
    return RunConfig(flow=flow, source=source, **kwargs)


def read_values(path) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:  # messages carry the offending line number
        raise ValidationError(f"{path}: parse error: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ValidationError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ValidationError(f"{path}: unknown key {section}.{key}")
            values[(section, key)] = raw
    return values


def load_config(path, overrides=None) -> RunConfig:
    values = read_values(path)
    values.update(parse_overrides(overrides))
    return build_config(values, source=str(path))
