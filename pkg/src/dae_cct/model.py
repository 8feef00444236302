"""Staged semi-explicit DAE models and the one-machine one-bus instance.

A model exposes ``f``, ``g`` and all first partials for each of the three
stages. Parameters are passed as a plain vector ``p`` ordered as
``model.param_names``; :class:`ParameterSet` is the named view of it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .numerics import determinant


class Stage(enum.Enum):
    PRE = "pre"
    FAULT = "fault"
    POST = "post"

    @classmethod
    def parse(cls, s: "Stage | str") -> "Stage":
        if isinstance(s, Stage):
            return s
        key = s.lower().replace("-", "").replace("_", "")
        aliases = {"pre": "pre", "prefault": "pre", "fault": "fault", "faulton": "fault",
                   "post": "post", "postfault": "post"}
        if key not in aliases:
            raise ValueError(f"unknown stage {s!r}")
        return cls(aliases[key])


class NoFoldError(ValueError):
    """The algebraic branch has no fold for these parameters."""


@dataclass(frozen=True)
class ParameterSet:
    """SMIB constants, per unit. Defaults are the base case of the study."""

    X: float = 0.5
    Pm: float = 0.5
    E: float = 1.0
    M: float = 1.0
    Dl: float = 1.0
    Dg: float = 1.0
    Ql: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"parameter {f.name} must be finite, got {v}")
        if self.X <= 0 or self.M <= 0 or self.E <= 0:
            raise ValueError("X, M and E must be positive")
        if self.Ql < 0:
            raise ValueError("Ql must be non-negative")
        if self.Dl == 0:
            raise ValueError("Dl must be nonzero")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def index(cls, name: str | int) -> int:
        if isinstance(name, int):
            if not 0 <= name < len(fields(cls)):
                raise KeyError(f"parameter index {name} out of range")
            return name
        try:
            return cls.names().index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}; expected one of {cls.names()}") from None

    @property
    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_vector(cls, p) -> "ParameterSet":
        return cls(*map(float, p))

    def with_value(self, name: str | int, value: float) -> "ParameterSet":
        return replace(self, **{self.names()[self.index(name)]: float(value)})

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in self.names()}


class DaeModel:
    """Interface of a staged DAE ``x' = f(x, y, p), 0 = g_stage(x, y, p)``.

    Subclasses implement the evaluators below. Vectors are 1-D arrays,
    Jacobian blocks 2-D arrays, ``fp``/``gp`` return the column for one
    parameter index.
    """

    n: int
    m: int
    param_names: tuple[str, ...]

    @property
    def np(self) -> int:
        return len(self.param_names)

    def f(self, stage, x, y, p): raise NotImplementedError
    def g(self, stage, x, y, p): raise NotImplementedError
    def fx(self, stage, x, y, p): raise NotImplementedError
    def fy(self, stage, x, y, p): raise NotImplementedError
    def fp(self, stage, x, y, p, i): raise NotImplementedError
    def gx(self, stage, x, y, p): raise NotImplementedError
    def gy(self, stage, x, y, p): raise NotImplementedError
    def gp(self, stage, x, y, p, i): raise NotImplementedError

    def delta(self, stage, x, y, p) -> float:
        """Singularity monitor ``det(dg/dy)``."""
        return determinant(self.gy(stage, x, y, p))

    def admissible(self, stage, x, y) -> bool:
        """Physical admissibility of an algebraic solution (e.g. positive voltages)."""
        return True


@dataclass(frozen=True)
class SmibModel(DaeModel):
    """One machine feeding one load bus, with the bus angle as reference.

    States: ``x = (rotor angle minus bus angle, speed deviation)``, ``y = bus
    voltage magnitude``. The fault is a solid three-phase fault at the bus,
    ``g_fault = y``, cleared without a topology change so ``g_post = g_pre``.
    """

    params: ParameterSet = field(default_factory=ParameterSet)
    n: int = 2
    m: int = 1
    param_names: tuple[str, ...] = ParameterSet.names()

    @property
    def p0(self) -> np.ndarray:
        return self.params.vector

    # f is stage independent; on the fault stage it is evaluated at y = 0.
    def f(self, stage, x, y, p):
        X, Pm, E, M, Dl, Dg, _ = p
        pe = E * y[0] * math.sin(x[0]) / X
        return np.array([x[1] + (Pm - pe) / Dl, (Pm - pe - Dg * x[1]) / M])

    def fx(self, stage, x, y, p):
        X, Pm, E, M, Dl, Dg, _ = p
        dpe = E * y[0] * math.cos(x[0]) / X
        return np.array([[-dpe / Dl, 1.0], [-dpe / M, -Dg / M]])

    def fy(self, stage, x, y, p):
        X, Pm, E, M, Dl, Dg, _ = p
        dpe = E * math.sin(x[0]) / X
        return np.array([[-dpe / Dl], [-dpe / M]])

    def fp(self, stage, x, y, p, i):
        X, Pm, E, M, Dl, Dg, _ = p
        s = math.sin(x[0])
        pe = E * y[0] * s / X
        name = self.param_names[i]
        if name == "X":
            return np.array([pe / (X * Dl), pe / (X * M)])
        if name == "Pm":
            return np.array([1.0 / Dl, 1.0 / M])
        if name == "E":
            d = y[0] * s / X
            return np.array([-d / Dl, -d / M])
        if name == "M":
            return np.array([0.0, -(Pm - pe - Dg * x[1]) / M**2])
        if name == "Dl":
            return np.array([-(Pm - pe) / Dl**2, 0.0])
        if name == "Dg":
            return np.array([0.0, -x[1] / M])
        return np.zeros(2)

    def g(self, stage, x, y, p):
        if stage is Stage.FAULT:
            return np.array([y[0]])
        X, _, E, _, _, _, Ql = p
        v = y[0]
        return np.array([E * v * math.cos(x[0]) / X - v * v / X - Ql])

    def gx(self, stage, x, y, p):
        if stage is Stage.FAULT:
            return np.zeros((1, 2))
        X, _, E, _, _, _, _ = p
        return np.array([[-E * y[0] * math.sin(x[0]) / X, 0.0]])

    def gy(self, stage, x, y, p):
        if stage is Stage.FAULT:
            return np.ones((1, 1))
        X, _, E, _, _, _, _ = p
        return np.array([[(E * math.cos(x[0]) - 2.0 * y[0]) / X]])

    def gp(self, stage, x, y, p, i):
        if stage is Stage.FAULT:
            return np.zeros(1)
        X, _, E, _, _, _, _ = p
        v, c = y[0], math.cos(x[0])
        name = self.param_names[i]
        if name == "X":
            return np.array([-(E * v * c - v * v) / X**2])
        if name == "E":
            return np.array([v * c / X])
        if name == "Ql":
            return np.array([-1.0])
        return np.zeros(1)

    def delta(self, stage, x, y, p) -> float:
        return float(self.gy(stage, x, y, p)[0, 0])

    def admissible(self, stage, x, y) -> bool:
        return stage is Stage.FAULT or y[0] >= 0.0


def smib_model(params: ParameterSet | None = None) -> SmibModel:
    return SmibModel(params=params or ParameterSet())


def smib_singular_locus(params: ParameterSet) -> tuple[float, float]:
    """Fold of the voltage branch: ``(x1_s, y_s)`` with ``y_s = sqrt(Ql X)``.

    Raises :class:`NoFoldError` when ``E**2 < 4 Ql X``.
    """
    X, E, Ql = params.X, params.E, params.Ql
    if E * E < 4.0 * Ql * X * (1.0 - 1e-12):
        raise NoFoldError(f"E^2 = {E * E:.6g} < 4 Ql X = {4 * Ql * X:.6g}: no fold on the upper half")
    y_s = math.sqrt(Ql * X)
    return math.acos(min(1.0, 2.0 * y_s / E)), y_s


def smib_voltage_branches(params: ParameterSet, x1: float) -> tuple[float, float] | None:
    """Both real roots ``(high, low)`` of ``g = 0`` at rotor angle ``x1``, or None."""
    c = params.E * math.cos(x1)
    disc = c * c - 4.0 * params.Ql * params.X
    if disc < 0:
        return None
    r = math.sqrt(disc)
    return (c + r) / 2.0, (c - r) / 2.0


@dataclass(frozen=True)
class StagedScenario:
    """A model with its three stages and the parameter set they share."""

    model: DaeModel
    params: ParameterSet = field(default_factory=ParameterSet)
    x_guess: tuple[float, ...] | None = None
    y_guess: tuple[float, ...] | None = None

    @property
    def p(self) -> np.ndarray:
        return self.params.vector

    def sep_guess(self) -> tuple[np.ndarray, np.ndarray]:
        """Initial guess for the pre-fault equilibrium (flat start unless overridden)."""
        x = np.zeros(self.model.n) if self.x_guess is None else np.asarray(self.x_guess, float)
        y = np.ones(self.model.m) if self.y_guess is None else np.asarray(self.y_guess, float)
        return x, y

    def with_param(self, name: str | int, value: float) -> "StagedScenario":
        params = self.params.with_value(name, value)
        model = self.model
        if isinstance(model, SmibModel):
            model = replace(model, params=params)
        return replace(self, model=model, params=params)


def smib_scenario(**overrides) -> StagedScenario:
    params = ParameterSet(**overrides)
    return StagedScenario(model=smib_model(params), params=params)


@dataclass(frozen=True)
class State:
    x: np.ndarray
    y: np.ndarray
    stage: Stage
