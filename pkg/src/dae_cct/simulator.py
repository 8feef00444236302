"""Staged DAE integration, the post-fault shadow branch and fold localisation.

Dynamic states are advanced with fixed-step RK4 on ``x' = f(x, y(x), p)``; the
algebraic states are re-solved by Newton at every stage evaluation, warm
started from the previous solution so the integrator stays on one branch.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import SepSolution, find_sep
from .model import DaeModel, Stage, StagedScenario
from .numerics import (
    ConvergenceError,
    NoBracketError,
    bracketed_root,
    finite_difference_jacobian,
    newton_algebraic,
    newton_solve,
)


@dataclass(frozen=True)
class SolverSettings:
    h: float = 1e-3
    t_max: float = 20.0
    sing_rel_tol: float = 1e-8
    newton_tol: float = 1e-10
    newton_maxiter: int = 50
    eq_tol: float = 1e-8
    eq_hold: float = 1.0
    settle_h: float = 1e-2
    t_settle: float = 60.0
    diverge_bound: float = 3 * math.pi

    def __post_init__(self):
        for name in ("h", "t_max", "sing_rel_tol", "newton_tol", "eq_tol", "eq_hold",
                     "settle_h", "diverge_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t_settle < 0:
            raise ValueError("t_settle must be non-negative")


DEFAULT_SETTINGS = SolverSettings()


class Termination(enum.Enum):
    TIME_LIMIT = "TimeLimit"
    FOLD_HIT = "FoldHit"
    ALGEBRAIC_FAILURE = "AlgebraicFailure"
    CONVERGED = "Converged"
    DIVERGED = "Diverged"


class InconsistentInitialError(ValueError):
    pass


class FoldLocalizationError(ArithmeticError):
    pass


@dataclass
class Trajectory:
    """Samples of one stage; ``y_post``/``delta_post`` hold the shadow branch if tracked."""

    stage: Stage
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    termination: Termination
    t_end: float
    y_post: np.ndarray | None = None
    delta_post: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def to_csv(self, path) -> None:
        n, m = self.x.shape[1], self.y.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(m)]
        if self.y_post is not None:
            header += [f"y_post{i + 1}" for i in range(m)] + ["delta_post"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.x[k], *self.y[k]]
                if self.y_post is not None:
                    row += [*self.y_post[k], self.delta_post[k]]
                w.writerow(fmt(v) for v in row)


def fmt(v) -> str:
    return f"{float(v) + 0.0:.9g}"


@dataclass(frozen=True)
class FoldEvent:
    t_fold: float
    x_cl: np.ndarray
    y_post_cl: np.ndarray
    y_fault_cl: np.ndarray
    delta_residual: float
    sigma_min: float
    g_residual: float


def _step_times(t0: float, t_end: float, h: float):
    """Grid ``t0 + k h`` closed by a final partial step landing on ``t_end``."""
    nsteps = max(1, int(math.ceil((t_end - t0) / h - 1e-9)))
    ts = t0 + h * np.arange(nsteps + 1)
    ts[-1] = t_end
    return ts


class _StageField:
    """``x -> f(x, y(x))`` with a warm-started algebraic solve."""

    def __init__(self, model: DaeModel, stage: Stage, p, y0, settings: SolverSettings):
        self.model, self.stage, self.p, self.s = model, stage, p, settings
        self.y = np.asarray(y0, dtype=float)

    def solve(self, x):
        self.y = newton_algebraic(self.model, self.stage, x, self.y, self.p,
                                  tol=self.s.newton_tol, maxiter=self.s.newton_maxiter)
        return self.y

    def __call__(self, t, x):
        return self.model.f(self.stage, x, self.solve(x), self.p)


def _rk4(fld, t, x, h):
    # signed step: fold polishing evaluates x(t_b + tau) for tau on both sides
    k1 = fld(t, x)
    k2 = fld(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = fld(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = fld(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_stage(
    model: DaeModel,
    stage,
    x0,
    y0_guess,
    p,
    t_end: float,
    h: float | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sing_tol: float | None = None,
    detect_equilibrium: bool = True,
) -> Trajectory:
    """Integrate one stage from ``x0``.

    Stops at ``t_end``, when the algebraic solve fails, when ``|det(dg/dy)|``
    drops to ``sing_tol`` or changes sign (if ``sing_tol`` is given), when
    ``|x1|`` leaves ``settings.diverge_bound``, or once ``||f|| <= eq_tol`` has
    held for ``eq_hold`` seconds.
    """
    stage = Stage.parse(stage)
    h = settings.h if h is None else h
    x = np.asarray(x0, dtype=float)
    try:
        y = newton_algebraic(model, stage, x, y0_guess, p, tol=settings.newton_tol,
                             maxiter=settings.newton_maxiter)
    except ConvergenceError as exc:
        raise InconsistentInitialError(f"no consistent algebraic state at t = 0: {exc}") from exc
    fld = _StageField(model, stage, p, y, settings)
    ts = _step_times(0.0, t_end, h)
    T, Xs, Ys = [0.0], [x], [y]
    d0 = model.delta(stage, x, y, p)
    termination, t_stop = Termination.TIME_LIMIT, float(ts[-1])
    quiet_since = None
    for k in range(len(ts) - 1):
        t, dt = ts[k], ts[k + 1] - ts[k]
        fld.y = Ys[-1]
        try:
            x_new = _rk4(fld, t, Xs[-1], dt)
            y_new = fld.solve(x_new)
        except ConvergenceError:
            termination, t_stop = Termination.ALGEBRAIC_FAILURE, float(t)
            break
        if not model.admissible(stage, x_new, y_new):
            termination, t_stop = Termination.ALGEBRAIC_FAILURE, float(t)
            break
        if not np.all(np.isfinite(x_new)):
            termination, t_stop = Termination.DIVERGED, float(t)
            break
        T.append(float(ts[k + 1]))
        Xs.append(x_new)
        Ys.append(y_new)
        if sing_tol is not None:
            d = model.delta(stage, x_new, y_new, p)
            if abs(d) <= sing_tol or np.sign(d) != np.sign(d0):
                termination, t_stop = Termination.FOLD_HIT, T[-1]
                break
        if abs(x_new[0]) > settings.diverge_bound:
            termination, t_stop = Termination.DIVERGED, T[-1]
            break
        if detect_equilibrium:
            if np.linalg.norm(model.f(stage, x_new, y_new, p)) <= settings.eq_tol:
                quiet_since = T[-1] if quiet_since is None else quiet_since
                if T[-1] - quiet_since >= settings.eq_hold:
                    termination, t_stop = Termination.CONVERGED, T[-1]
                    break
            else:
                quiet_since = None
    return Trajectory(stage=stage, t=np.array(T), x=np.array(Xs), y=np.array(Ys),
                      termination=termination, t_end=t_stop)


def pre_fault_sep(scenario: StagedScenario) -> SepSolution:
    return find_sep(scenario.model, Stage.PRE, scenario.p, scenario.sep_guess())


def singularity_tolerance(sep: SepSolution, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    return settings.sing_rel_tol * abs(sep.delta)


class _ShadowMarch:
    """Fault-on integration carrying the post-fault algebraic solution along."""

    def __init__(self, scenario, settings, tol_sing, sign0):
        self.model, self.p, self.s = scenario.model, scenario.p, settings
        self.tol_sing, self.sign0 = tol_sing, sign0

    def shadow(self, x, y_guess):
        """Post-fault ``(y, delta)`` on the tracked branch, or None past the fold."""
        try:
            y = newton_algebraic(self.model, Stage.POST, x, y_guess, self.p,
                                 tol=self.s.newton_tol, maxiter=self.s.newton_maxiter)
        except ConvergenceError:
            return None
        if not self.model.admissible(Stage.POST, x, y):
            return None
        d = self.model.delta(Stage.POST, x, y, self.p)
        if abs(d) <= self.tol_sing or np.sign(d) != self.sign0:
            return None
        return y, d

    @staticmethod
    def _switched(DP, d_new):
        """Branch crossing: det**2 extrapolates through zero yet |det| grows."""
        if len(DP) < 2 or abs(d_new) <= abs(DP[-1]):
            return False
        return 2 * DP[-1] ** 2 - DP[-2] ** 2 <= 0

    def run(self, t0, x0, yf0, yp0, dp0, t_stop, h):
        fld = _StageField(self.model, Stage.FAULT, self.p, yf0, self.s)
        T, Xs, YF, YP, DP = [t0], [x0], [yf0], [yp0], [dp0]
        ts = _step_times(t0, t_stop, h)
        lost = False
        for k in range(len(ts) - 1):
            fld.y = YF[-1]
            x_new = _rk4(fld, ts[k], Xs[-1], ts[k + 1] - ts[k])
            yf_new = fld.solve(x_new)
            sh = self.shadow(x_new, YP[-1])
            if sh is None or self._switched(DP, sh[1]):
                lost = True
                break
            T.append(float(ts[k + 1]))
            Xs.append(x_new)
            YF.append(yf_new)
            YP.append(sh[0])
            DP.append(sh[1])
        return T, Xs, YF, YP, DP, lost

    def localize(self, T, Xs, YF, YP, DP, h):
        """Fold time inside ``(T[-1], T[-1] + h]`` by solving ``g_post = 0, det = 0``.

        ``det(dg/dy)`` behaves like ``sqrt(t_fold - t)`` and never changes sign,
        so the starting estimate comes from extrapolating ``det**2`` over the
        last samples; Newton then polishes ``(t, y_post)`` jointly.
        """
        model, p = self.model, self.p
        k = len(T) - 1
        b = max(k - 1, 0)
        idx = list(range(max(0, k - 3), k + 1))
        tt = np.array([T[i] for i in idx]) - T[b]
        d2 = np.array([DP[i] ** 2 for i in idx])
        span = T[k] - T[b] + 2 * h
        if len(idx) >= 2:
            poly = np.polynomial.Polynomial.fit(tt, d2, deg=len(idx) - 1)
            try:
                tau0 = bracketed_root(poly, tt[-1], span)
            except NoBracketError:
                tau0 = tt[-1] + 0.5 * h
        else:
            tau0 = 0.5 * h
        fld = _StageField(model, Stage.FAULT, p, YF[b], self.s)

        def x_at(tau):
            fld.y = YF[b]
            return Xs[b] if tau == 0 else _rk4(fld, T[b], Xs[b], tau)

        def resid(z):
            x = x_at(z[0])
            y = z[1:]
            return np.concatenate([model.g(Stage.POST, x, y, p), [model.delta(Stage.POST, x, y, p)]])

        z0 = np.concatenate([[tau0], YP[k]])
        try:
            z = newton_solve(resid, lambda z: finite_difference_jacobian(resid, z, 1e-7), z0,
                             tol=1e-12, maxiter=60)
        except ConvergenceError as exc:
            raise FoldLocalizationError(f"fold polish failed: {exc}") from exc
        t_fold = T[b] + z[0]
        if not (T[k] - 1e-12 <= t_fold <= T[k] + h * (1 + 1e-6)):
            raise FoldLocalizationError(f"fold estimate {t_fold:.6g} outside bracket [{T[k]:.6g}, {T[k] + h:.6g}]")
        x_cl, y_cl = x_at(z[0]), z[1:]
        fld.y = YF[b]
        yf_cl = fld.solve(x_cl)
        gy = model.gy(Stage.POST, x_cl, y_cl, p)
        return FoldEvent(
            t_fold=float(t_fold),
            x_cl=x_cl,
            y_post_cl=y_cl,
            y_fault_cl=yf_cl,
            delta_residual=float(model.delta(Stage.POST, x_cl, y_cl, p)),
            sigma_min=float(np.linalg.svd(gy, compute_uv=False).min()),
            g_residual=float(np.linalg.norm(model.g(Stage.POST, x_cl, y_cl, p))),
        )


def integrate_fault_with_shadow(
    scenario: StagedScenario,
    settings: SolverSettings = DEFAULT_SETTINGS,
    t_max: float | None = None,
    h: float | None = None,
) -> tuple[Trajectory, FoldEvent | None]:
    """Fault-on trajectory from the pre-fault equilibrium with the post-fault shadow branch.

    Integration stops at ``t_max`` or where the shadow branch reaches the
    post-fault singular surface; in the latter case the fold point is appended
    as the last sample and returned as a :class:`FoldEvent`.
    """
    model, p = scenario.model, scenario.p
    t_max = settings.t_max if t_max is None else t_max
    h = settings.h if h is None else h
    sep = pre_fault_sep(scenario)
    tol_sing = singularity_tolerance(sep, settings)
    x0 = sep.x_s
    yf0 = newton_algebraic(model, Stage.FAULT, x0, sep.y_s, p, tol=settings.newton_tol)
    yp0 = newton_algebraic(model, Stage.POST, x0, sep.y_s, p, tol=settings.newton_tol)
    d0 = model.delta(Stage.POST, x0, yp0, p)
    march = _ShadowMarch(scenario, settings, tol_sing, np.sign(d0))
    T, Xs, YF, YP, DP, lost = march.run(0.0, x0, yf0, yp0, d0, t_max, h)
    event = None
    if lost:
        hh = h
        for attempt in range(3):
            try:
                event = march.localize(T, Xs, YF, YP, DP, hh)
                break
            except FoldLocalizationError:
                if attempt == 2:
                    raise
                # redo the last bracket with a finer step
                b = max(len(T) - 2, 0)
                sub = march.run(T[b], Xs[b], YF[b], YP[b], DP[b], T[-1] + hh, hh / 10)
                T, Xs, YF, YP, DP = (a[:b] + s for a, s in zip((T, Xs, YF, YP, DP), sub[:5]))
                hh /= 10
        T.append(event.t_fold)
        Xs.append(event.x_cl)
        YF.append(event.y_fault_cl)
        YP.append(event.y_post_cl)
        DP.append(event.delta_residual)
    traj = Trajectory(
        stage=Stage.FAULT,
        t=np.array(T),
        x=np.array(Xs),
        y=np.array(YF),
        termination=Termination.FOLD_HIT if event else Termination.TIME_LIMIT,
        t_end=event.t_fold if event else float(T[-1]),
        y_post=np.array(YP),
        delta_post=np.array(DP),
    )
    return traj, event


def fault_state_at(scenario: StagedScenario, traj: Trajectory, t: float,
                   settings: SolverSettings = DEFAULT_SETTINGS):
    """``(x, y_fault)`` at time ``t`` by an RK4 sub-step from the preceding sample.

    ``t`` may run up to one step past the last sample: the fault-on field
    itself stays regular beyond the post-fault fold.
    """
    if not traj.t[0] <= t <= traj.t[-1] + settings.h:
        raise ValueError(f"t = {t} outside trajectory horizon [{traj.t[0]}, {traj.t[-1]}]")
    k = int(np.searchsorted(traj.t, t, side="right") - 1)
    k = min(k, len(traj.t) - 1)
    dt = t - traj.t[k]
    if dt <= 0:
        return traj.x[k].copy(), traj.y[k].copy()
    fld = _StageField(scenario.model, Stage.FAULT, scenario.p, traj.y[k], settings)
    x = _rk4(fld, traj.t[k], traj.x[k], dt)
    return x, fld.solve(x)


class Verdict(enum.Enum):
    STABLE = "Stable"
    FOLD_HIT = "FoldHit"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class PostFaultOutcome:
    verdict: Verdict
    t: float = 0.0
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def at_clearing(self) -> bool:
        return self.verdict is Verdict.FOLD_HIT and self.t == 0.0


def post_fault_stable(
    scenario: StagedScenario,
    x_cl,
    y_guess=None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    t_settle: float | None = None,
) -> PostFaultOutcome:
    """Classify the post-fault trajectory started from clearing state ``x_cl``.

    ``y_guess`` defaults to the pre-fault equilibrium voltage (high-voltage
    branch). A clearing state with no consistent post-fault solution on that
    branch is a fold hit at ``t = 0``. With ``t_settle = 0`` only that
    clearing-state check is made.
    """
    model, p = scenario.model, scenario.p
    t_settle = settings.t_settle if t_settle is None else t_settle
    sep = pre_fault_sep(scenario)
    tol_sing = singularity_tolerance(sep, settings)
    y_guess = sep.y_s if y_guess is None else y_guess
    x_cl = np.asarray(x_cl, dtype=float)
    try:
        y0 = newton_algebraic(model, Stage.POST, x_cl, y_guess, p, tol=settings.newton_tol,
                              maxiter=settings.newton_maxiter)
    except ConvergenceError:
        return PostFaultOutcome(Verdict.FOLD_HIT, 0.0)
    if not model.admissible(Stage.POST, x_cl, y0):
        return PostFaultOutcome(Verdict.FOLD_HIT, 0.0)
    d = model.delta(Stage.POST, x_cl, y0, p)
    if abs(d) <= tol_sing or np.sign(d) != np.sign(sep.delta):
        return PostFaultOutcome(Verdict.FOLD_HIT, 0.0)
    if t_settle == 0:
        return PostFaultOutcome(Verdict.STABLE, 0.0)
    traj = integrate_stage(model, Stage.POST, x_cl, y0, p, t_settle, settings.settle_h,
                           settings, sing_tol=tol_sing)
    term = traj.termination
    if term in (Termination.FOLD_HIT, Termination.ALGEBRAIC_FAILURE):
        return PostFaultOutcome(Verdict.FOLD_HIT, max(traj.t_end, settings.settle_h), traj)
    if term is Termination.DIVERGED:
        return PostFaultOutcome(Verdict.DIVERGED, traj.t_end, traj)
    if term is Termination.CONVERGED:
        return PostFaultOutcome(Verdict.STABLE, traj.t_end, traj)
    # horizon reached without settling: stable only if we ended near an equilibrium
    post_sep = find_sep(model, Stage.POST, p, (traj.x[-1], traj.y[-1]))
    near = np.linalg.norm(traj.x[-1] - post_sep.x_s) < 1e-3
    return PostFaultOutcome(Verdict.STABLE if near else Verdict.DIVERGED, traj.t_end, traj)
