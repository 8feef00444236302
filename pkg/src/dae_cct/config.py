"""JSON scenario configuration.

Top-level keys (all optional)::

    {
      "model": "smib",
      "parameters": {"X": 0.5, "Pm": 0.5, "E": 1.0, "M": 1.0, "Dl": 1.0, "Dg": 1.0, "Ql": 0.1},
      "fault": {"kind": "bus_three_phase", "post_topology": "same_as_pre"},
      "initial_guess": {"x": [0.0, 0.0], "y": [1.0]},
      "solver": {"h": 0.001, "t_max": 20.0, ...},          # SolverSettings fields
      "cct": {"method": "event", "criterion": "clearing", "t_lo": 0.0, "t_hi": 3.0, "tol": 1e-4},
      "sensitivity": {"parameter": "E", "fd_delta": 0.001},
      "sweep": {"parameter": "E", "values": [0.9, 1.0]}     # or "start"/"stop"/"step"
      "classify": {"seeds": [[1.107, 0.0, 0.2236]], "arc_step": 0.05, "count": 9},
      "output": {"dir": "out"}
    }

Unknown keys are rejected at every level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .model import ParameterSet, StagedScenario, smib_model
from .simulator import SolverSettings


class ConfigError(ValueError):
    pass


SECTIONS = {
    "model": None,
    "parameters": set(ParameterSet.names()),
    "fault": {"kind", "post_topology"},
    "initial_guess": {"x", "y"},
    "solver": {f.name for f in fields(SolverSettings)},
    "cct": {"method", "criterion", "t_lo", "t_hi", "tol"},
    "sensitivity": {"parameter", "fd_delta"},
    "sweep": {"parameter", "values", "start", "stop", "step"},
    "classify": {"seeds", "arc_step", "count"},
    "output": {"dir"},
}


@dataclass
class ScenarioConfig:
    model: str = "smib"
    parameters: dict = field(default_factory=dict)
    fault: dict = field(default_factory=lambda: {"kind": "bus_three_phase", "post_topology": "same_as_pre"})
    initial_guess: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    cct: dict = field(default_factory=dict)
    sensitivity: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    classify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, allowed in SECTIONS.items():
            if allowed is None or key not in d:
                continue
            if not isinstance(d[key], dict):
                raise ConfigError(f"section {key!r} must be an object")
            bad = set(d[key]) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.model != "smib":
            raise ConfigError(f"unsupported model {self.model!r} (only 'smib')")
        if self.fault.get("kind", "bus_three_phase") != "bus_three_phase":
            raise ConfigError("only the bus three-phase fault is supported")
        if self.fault.get("post_topology", "same_as_pre") != "same_as_pre":
            raise ConfigError("post-fault topology must equal pre-fault for the smib model")
        try:
            self.settings()
            self.params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("tol",):
            if key in self.cct and not self.cct[key] > 0:
                raise ConfigError("cct.tol must be positive")
        if "fd_delta" in self.sensitivity and not self.sensitivity["fd_delta"] > 0:
            raise ConfigError("sensitivity.fd_delta must be positive")

    def params(self) -> ParameterSet:
        return ParameterSet(**{k: float(v) for k, v in self.parameters.items()})

    def settings(self) -> SolverSettings:
        return SolverSettings(**self.solver)

    def scenario(self) -> StagedScenario:
        params = self.params()
        xg, yg = self.initial_guess.get("x"), self.initial_guess.get("y")
        return StagedScenario(model=smib_model(params), params=params,
                              x_guess=None if xg is None else tuple(map(float, xg)),
                              y_guess=None if yg is None else tuple(map(float, yg)))

    def sweep_values(self) -> list[float]:
        s = self.sweep
        if "values" in s:
            return [float(v) for v in s["values"]]
        if {"start", "stop", "step"} <= set(s):
            return grid(s["start"], s["stop"], s["step"])
        return []


def grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded to suppress float drift."""
    if step <= 0:
        raise ConfigError("grid step must be positive")
    k = int(np.floor((stop - start) / step + 1e-9))
    return [round(start + j * step, 12) for j in range(k + 1)]


BASE_CONFIG = {
    "model": "smib",
    "parameters": ParameterSet().as_dict(),
    "fault": {"kind": "bus_three_phase", "post_topology": "same_as_pre"},
    "solver": {"h": 1e-3, "t_max": 20.0},
    "cct": {"method": "event", "criterion": "clearing", "t_lo": 0.0, "t_hi": 3.0, "tol": 1e-4},
    "sensitivity": {"parameter": "E", "fd_delta": 1e-3},
    "sweep": {"parameter": "E", "start": 0.9, "stop": 1.2, "step": 0.05},
    "output": {"dir": "out"},
}
