"""Parameter sensitivity of the pre-fault equilibrium and of the fault-on flow."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import SepSolution
from .model import DaeModel, ParameterSet, Stage, StagedScenario
from .numerics import SingularMatrixError, lu_solve, newton_algebraic
from .simulator import (
    DEFAULT_SETTINGS,
    FoldEvent,
    SolverSettings,
    Trajectory,
    _StageField,
    fmt,
    integrate_fault_with_shadow,
    pre_fault_sep,
    singularity_tolerance,
)

BLOWUP_WINDOW = 1e3
"""Shadow sensitivities are withheld where ``|det| < BLOWUP_WINDOW * tol_sing``."""


class SingularReducedJacobianError(ArithmeticError):
    pass


class InvalidSensitivityError(ValueError):
    """The post-fault algebraic sensitivity was requested inside the fold window."""


def _param_index(model: DaeModel, i) -> int:
    if isinstance(i, str):
        try:
            return model.param_names.index(i)
        except ValueError:
            raise KeyError(f"unknown parameter {i!r}") from None
    return int(i)


def sep_sensitivity(model: DaeModel, p, i, sep: SepSolution) -> np.ndarray:
    """Derivative of the pre-fault equilibrium dynamic state w.r.t. parameter ``i``.

    Evaluates ``[fx - fy gy^-1 gx]^-1 (fy gy^-1 gp - fp)`` at the equilibrium
    with linear solves in place of inverses.
    """
    i = _param_index(model, i)
    st, x, y = Stage.PRE, sep.x_s, sep.y_s
    fy = model.fy(st, x, y, p)
    gy = model.gy(st, x, y, p)
    try:
        Z = lu_solve(gy, model.gx(st, x, y, p))
        w = lu_solve(gy, model.gp(st, x, y, p, i))
        reduced = model.fx(st, x, y, p) - fy @ np.atleast_2d(Z).reshape(model.m, model.n)
        return lu_solve(reduced, fy @ w - model.fp(st, x, y, p, i))
    except SingularMatrixError as exc:
        raise SingularReducedJacobianError(f"equilibrium sensitivity undefined: {exc}") from exc


class _VariationalField:
    """Fault-on flow augmented with ``dx/dx0`` (n x n) and ``dx/dp_i`` (n)."""

    def __init__(self, scenario: StagedScenario, i: int, y0, settings: SolverSettings):
        self.model, self.p, self.i = scenario.model, scenario.p, i
        self.fld = _StageField(self.model, Stage.FAULT, self.p, y0, settings)
        self.n = self.model.n

    def split(self, z):
        n = self.n
        return z[:n], z[n:n + n * n].reshape(n, n), z[n + n * n:]

    def algebraic(self, x, y, Phi, s):
        """``dy_fault/dx0`` and ``dy_fault/dp_i`` from the differentiated constraint."""
        m, p, st = self.model, self.p, Stage.FAULT
        gy = m.gy(st, x, y, p)
        gx = m.gx(st, x, y, p)
        dy_dx0 = -np.atleast_2d(lu_solve(gy, gx @ Phi)).reshape(m.m, self.n)
        dy_dp = -lu_solve(gy, gx @ s + m.gp(st, x, y, p, self.i))
        return dy_dx0, dy_dp

    def __call__(self, t, z):
        m, p, st = self.model, self.p, Stage.FAULT
        x, Phi, s = self.split(z)
        y = self.fld.solve(x)
        dy_dx0, dy_dp = self.algebraic(x, y, Phi, s)
        fx, fy = m.fx(st, x, y, p), m.fy(st, x, y, p)
        dPhi = fx @ Phi + fy @ dy_dx0
        ds = fx @ s + fy @ dy_dp + m.fp(st, x, y, p, self.i)
        return np.concatenate([m.f(st, x, y, p), dPhi.ravel(), ds])

    def step(self, t, z, y_start, h):
        self.fld.y = y_start
        k1 = self(t, z)
        k2 = self(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = self(t + 0.5 * h, z + 0.5 * h * k2)
        k4 = self(t + h, z + h * k3)
        z_new = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x_new = z_new[:self.n]
        return z_new, self.fld.solve(x_new)


@dataclass
class VariationalState:
    """History of the fault-on variational solution, aligned with trajectory samples.

    ``dypost_*`` are NaN where the shadow branch is inside the fold window;
    use :meth:`post_sensitivity` to read them with validity checking.
    """

    scenario: StagedScenario = field(repr=False)
    param_index: int
    t: np.ndarray
    x: np.ndarray
    y_fault: np.ndarray
    dx_dx0: np.ndarray
    dx_dp: np.ndarray
    dyfault_dx0: np.ndarray
    dyfault_dp: np.ndarray
    y_post: np.ndarray
    delta_post: np.ndarray
    dypost_dx0: np.ndarray
    dypost_dp: np.ndarray
    post_valid: np.ndarray
    tol_sing: float
    settings: SolverSettings = field(default=DEFAULT_SETTINGS, repr=False)

    @property
    def valid_to(self) -> float:
        bad = np.flatnonzero(~self.post_valid)
        return float(self.t[bad[0] - 1]) if bad.size and bad[0] > 0 else float(self.t[-1])

    def post_sensitivity(self, k: int):
        """``(dy_post/dx0, dy_post/dp_i)`` at sample ``k``."""
        if not self.post_valid[k]:
            raise InvalidSensitivityError(
                f"post-fault algebraic sensitivity unbounded at t = {self.t[k]:.9g} "
                f"(|det| = {abs(self.delta_post[k]):.3e})")
        return self.dypost_dx0[k], self.dypost_dp[k]

    def state_at(self, t: float):
        """``(x, y_fault, dx_dx0, dx_dp)`` at time ``t`` (RK4 sub-step from the previous sample)."""
        if not self.t[0] - 1e-12 <= t <= self.t[-1] + 1e-12:
            raise ValueError(f"t = {t} beyond variational horizon [{self.t[0]}, {self.t[-1]}]")
        k = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1))
        dt = t - self.t[k]
        if abs(dt) <= 1e-15:
            return self.x[k], self.y_fault[k], self.dx_dx0[k], self.dx_dp[k]
        vf = _VariationalField(self.scenario, self.param_index, self.y_fault[k], self.settings)
        z = np.concatenate([self.x[k], self.dx_dx0[k].ravel(), self.dx_dp[k]])
        z, y = vf.step(self.t[k], z, self.y_fault[k], dt)
        x, Phi, s = vf.split(z)
        return x, y, Phi, s

    def to_csv(self, path) -> None:
        n, m = self.x.shape[1], self.y_fault.shape[1]
        header = ["t"]
        header += [f"dx{r + 1}_dx0{c + 1}" for r in range(n) for c in range(n)]
        header += [f"dx{r + 1}_dp" for r in range(n)]
        header += [f"dyfault{r + 1}_dp" for r in range(m)]
        header += [f"dypost{r + 1}_dp" for r in range(m)] + ["delta_post", "post_valid"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self.t)):
                row = [fmt(self.t[k]), *map(fmt, self.dx_dx0[k].ravel()), *map(fmt, self.dx_dp[k]),
                       *map(fmt, self.dyfault_dp[k])]
                row += [fmt(v) if self.post_valid[k] else "" for v in self.dypost_dp[k]]
                row += [fmt(self.delta_post[k]), int(self.post_valid[k])]
                w.writerow(row)


def _post_sensitivity(model, p, i, x, y_post, Phi, s):
    st = Stage.POST
    gy = model.gy(st, x, y_post, p)
    gx = model.gx(st, x, y_post, p)
    dx0 = -np.atleast_2d(lu_solve(gy, gx @ Phi)).reshape(model.m, model.n)
    dp = -lu_solve(gy, gx @ s + model.gp(st, x, y_post, p, i))
    return dx0, dp


def integrate_variational(
    scenario: StagedScenario,
    i,
    t_end: float | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    trajectory: Trajectory | None = None,
) -> VariationalState:
    """Co-integrate the fault-on flow and its sensitivities to ``x0`` and parameter ``i``.

    Uses the sample grid of ``trajectory`` (computed with the shadow branch if
    not supplied) up to ``t_end`` (default: its last sample). Post-fault
    algebraic sensitivities come from the differentiated post-fault
    constraint along the shadow branch.
    """
    model, p = scenario.model, scenario.p
    i = _param_index(model, i)
    if trajectory is None:
        trajectory, _ = integrate_fault_with_shadow(scenario, settings)
    traj = trajectory
    if traj.y_post is None:
        raise ValueError("trajectory carries no shadow branch")
    t_end = float(traj.t[-1]) if t_end is None else float(t_end)
    if t_end > traj.t[-1] + 1e-12:
        raise ValueError(f"t_end = {t_end} beyond trajectory horizon {traj.t[-1]}")
    sep = pre_fault_sep(scenario)
    tol_sing = singularity_tolerance(sep, settings)
    window = BLOWUP_WINDOW * tol_sing

    ks = np.flatnonzero(traj.t <= t_end + 1e-12)
    times = list(traj.t[ks])
    if times[-1] < t_end - 1e-12:
        times.append(t_end)
    n, m = model.n, model.m
    vf = _VariationalField(scenario, i, traj.y[0], settings)
    z = np.concatenate([traj.x[0], np.eye(n).ravel(), np.zeros(n)])
    y = traj.y[0]
    out = {k: [] for k in ("x", "yf", "Phi", "s", "dyf0", "dyfp", "yp", "dp", "dyp0", "dypp", "ok")}
    yp_guess = traj.y_post[0]
    for j, t in enumerate(times):
        if j > 0:
            z, y = vf.step(times[j - 1], z, y, t - times[j - 1])
        x, Phi, s = vf.split(z)
        dyf0, dyfp = vf.algebraic(x, y, Phi, s)
        if j < len(ks):
            yp, dpost = traj.y_post[ks[j]], traj.delta_post[ks[j]]
        else:
            yp = newton_algebraic(model, Stage.POST, x, yp_guess, p, tol=settings.newton_tol)
            dpost = model.delta(Stage.POST, x, yp, p)
        yp_guess = yp
        ok = abs(dpost) >= window
        if ok:
            dyp0, dypp = _post_sensitivity(model, p, i, x, yp, Phi, s)
        else:
            dyp0, dypp = np.full((m, n), np.nan), np.full(m, np.nan)
        for key, val in zip(out, (x, y, Phi.copy(), s.copy(), dyf0, dyfp, yp, dpost, dyp0, dypp, ok)):
            out[key].append(val)
    return VariationalState(
        scenario=scenario,
        param_index=i,
        t=np.array(times),
        x=np.array(out["x"]),
        y_fault=np.array(out["yf"]),
        dx_dx0=np.array(out["Phi"]),
        dx_dp=np.array(out["s"]),
        dyfault_dx0=np.array(out["dyf0"]),
        dyfault_dp=np.array(out["dyfp"]),
        y_post=np.array(out["yp"]),
        delta_post=np.array(out["dp"]),
        dypost_dx0=np.array(out["dyp0"]),
        dypost_dp=np.array(out["dypp"]),
        post_valid=np.array(out["ok"], dtype=bool),
        tol_sing=tol_sing,
        settings=settings,
    )


def clearing_blocks(var: VariationalState, t_cl: float):
    """``(B1, B2, B3)``: flow sensitivity to ``x0``, fault-on field, and flow sensitivity to ``p_i`` at ``t_cl``."""
    x, y, Phi, s = var.state_at(t_cl)
    model = var.scenario.model
    B2 = model.f(Stage.FAULT, x, y, var.scenario.p)
    return np.array(Phi), B2, np.array(s)


def fold_approach(var: VariationalState, event: FoldEvent, offsets=None):
    """Shadow sensitivities at ``t_fold - offset`` for shrinking offsets.

    Returns rows ``(t, delta_post, |dy_post/dx0|, |dy_post/dp_i|, valid)``;
    the norms are NaN inside the fold window.
    """
    if offsets is None:
        offsets = [10.0 ** -k for k in range(3, 14)]
    model, p = var.scenario.model, var.scenario.p
    k_last = len(var.t) - 2 if var.t[-1] >= event.t_fold - 1e-15 else len(var.t) - 1
    yp = var.y_post[k_last]
    rows = []
    for off in sorted(offsets, reverse=True):
        t = event.t_fold - off
        if t <= var.t[k_last]:
            continue
        x, _, Phi, s = var.state_at(t)
        yp = newton_algebraic(model, Stage.POST, x, yp, p, tol=1e-13)
        d = model.delta(Stage.POST, x, yp, p)
        if abs(d) < BLOWUP_WINDOW * var.tol_sing:
            rows.append((t, d, np.nan, np.nan, False))
            continue
        dyp0, dypp = _post_sensitivity(model, p, var.param_index, x, yp, Phi, s)
        rows.append((t, d, float(np.linalg.norm(dyp0)), float(np.linalg.norm(dypp)), True))
    return rows


def parameter_names(scenario: StagedScenario) -> tuple[str, ...]:
    return scenario.model.param_names if hasattr(scenario.model, "param_names") else ParameterSet.names()
