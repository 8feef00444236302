"""Critical clearing time for the fold-at-clearing mechanism and its parameter sensitivity."""
from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import StagedScenario, Stage
from .numerics import finite_difference_jacobian, left_null_vector
from .sensitivity import _param_index, clearing_blocks, integrate_variational, sep_sensitivity
from .simulator import (
    DEFAULT_SETTINGS,
    FoldEvent,
    PostFaultOutcome,
    SolverSettings,
    Trajectory,
    Verdict,
    fault_state_at,
    fmt,
    integrate_fault_with_shadow,
    integrate_stage,
    post_fault_stable,
    pre_fault_sep,
)

FOLD_TIME_TOL = 1e-9
"""Fold times are polished well below this; bracketing probes sit 10x further out."""


class NoFoldWithinHorizonError(ArithmeticError):
    pass


class BracketError(ValueError):
    pass


class NonMonotoneError(ArithmeticError):
    pass


class TransversalityError(ArithmeticError):
    """The fault-on trajectory meets the fold tangentially; the first-order formula fails."""


class Criterion(str, enum.Enum):
    """What counts as unstable after clearing.

    ``CLEARING``: no consistent post-fault state on the operating branch at the
    clearing instant, i.e. the fault lasted long enough to reach the
    singular surface. ``TRAJECTORY``: the full post-fault simulation reaches
    the singular surface, diverges or fails to settle.
    """

    CLEARING = "clearing"
    TRAJECTORY = "trajectory"


@dataclass
class CctResult:
    t_cct: float
    mechanism: str
    method: str
    fold_event: FoldEvent | None = None
    verified: bool = True
    mechanism_mismatch: bool = False
    criterion: Criterion = Criterion.CLEARING
    probes: tuple[PostFaultOutcome, PostFaultOutcome] | None = field(default=None, repr=False)
    trajectory: Trajectory | None = field(default=None, repr=False)
    interval: tuple[float, float] | None = None


def _mechanism(outcome: PostFaultOutcome) -> str:
    if outcome.verdict is Verdict.FOLD_HIT:
        return "FoldAtClearing" if outcome.at_clearing else "FoldAfterClearing"
    if outcome.verdict is Verdict.DIVERGED:
        return "Diverged"
    return "Stable"


def _probe(scenario, traj, t, criterion, settings, y_guess=None):
    x, _ = fault_state_at(scenario, traj, t, settings)
    t_settle = 0.0 if Criterion(criterion) is Criterion.CLEARING else None
    return post_fault_stable(scenario, x, y_guess=y_guess, settings=settings, t_settle=t_settle)


def find_cct_event(
    scenario: StagedScenario,
    settings: SolverSettings = DEFAULT_SETTINGS,
    criterion: Criterion | str = Criterion.CLEARING,
    verify: bool = True,
) -> CctResult:
    """CCT as the time the shadow branch of the fault-on trajectory reaches the fold.

    With ``verify`` the result is probed at ``t_cct -/+ 10 * FOLD_TIME_TOL``;
    if the probes do not show stable-then-fold-at-clearing under
    ``criterion`` the result is flagged ``mechanism_mismatch`` (not replaced).
    """
    criterion = Criterion(criterion)
    traj, event = integrate_fault_with_shadow(scenario, settings)
    if event is None:
        raise NoFoldWithinHorizonError(
            f"fault-on trajectory does not reach the post-fault singular surface within {settings.t_max} s")
    res = CctResult(t_cct=event.t_fold, mechanism="FoldAtClearing", method="EventDetection",
                    fold_event=event, criterion=criterion, trajectory=traj)
    if verify:
        eps = 10 * FOLD_TIME_TOL
        k = max(len(traj.t) - 2, 0)
        below = _probe(scenario, traj, event.t_fold - eps, criterion, settings, traj.y_post[k])
        above = _probe(scenario, traj, event.t_fold + eps, criterion, settings, traj.y_post[k])
        res.probes = (below, above)
        ok = below.verdict is Verdict.STABLE and above.at_clearing
        res.verified = ok
        res.mechanism_mismatch = not ok
    return res


def find_cct_bisection(
    scenario: StagedScenario,
    t_lo: float,
    t_hi: float,
    tol: float = 1e-4,
    settings: SolverSettings = DEFAULT_SETTINGS,
    criterion: Criterion | str = Criterion.CLEARING,
    scan: int = 8,
) -> CctResult:
    """Bisect the clearing time between a stable ``t_lo`` and an unstable ``t_hi``.

    Each probe re-solves the post-fault algebraic state from the pre-fault
    equilibrium voltage, independently of the shadow branch used by
    :func:`find_cct_event`. A coarse scan of ``scan`` interior points guards
    against a non-monotone predicate.
    """
    criterion = Criterion(criterion)
    if not 0 <= t_lo < t_hi:
        raise BracketError(f"need 0 <= t_lo < t_hi, got [{t_lo}, {t_hi}]")
    sep = pre_fault_sep(scenario)
    traj = integrate_stage(scenario.model, Stage.FAULT, sep.x_s, sep.y_s, scenario.p, t_hi,
                           settings.h, settings, detect_equilibrium=False)
    if traj.t[-1] < t_hi - 1e-12:
        raise BracketError(f"fault-on integration stopped at {traj.t_end} ({traj.termination.value})")

    def pred(t):
        return _probe(scenario, traj, t, criterion, settings)

    lo_out, hi_out = pred(t_lo), pred(t_hi)
    if lo_out.verdict is not Verdict.STABLE:
        raise BracketError(f"clearing at t_lo = {t_lo} is not stable ({_mechanism(lo_out)})")
    if hi_out.verdict is Verdict.STABLE:
        raise BracketError(f"clearing at t_hi = {t_hi} is stable")
    if scan:
        grid = np.linspace(t_lo, t_hi, scan + 2)[1:-1]
        flags = [pred(t).verdict is Verdict.STABLE for t in grid]
        if any(not a and b for a, b in zip(flags, flags[1:])):
            raise NonMonotoneError(f"stability predicate not monotone on scan grid: {list(zip(grid, flags))}")
        stable_pts = [t for t, f in zip(grid, flags) if f]
        unstable_pts = [t for t, f in zip(grid, flags) if not f]
        if stable_pts:
            t_lo, lo_out = stable_pts[-1], lo_out
        if unstable_pts:
            t_hi = unstable_pts[0]
            hi_out = pred(t_hi)
    lo, hi = t_lo, t_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        out = pred(mid)
        if out.verdict is Verdict.STABLE:
            lo, lo_out = mid, out
        else:
            hi, hi_out = mid, out
    return CctResult(t_cct=0.5 * (lo + hi), mechanism=_mechanism(hi_out), method="Bisection",
                     criterion=criterion, probes=(lo_out, hi_out), trajectory=traj, interval=(lo, hi))


@dataclass
class SensitivityBundle:
    param_index: int
    param_name: str
    A1: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    v_star: np.ndarray
    sigma_min: float
    numerator: float
    denominator: float
    dcct_dp: float
    fold_dy_dp: np.ndarray
    """Fold-point algebraic sensitivity fixed by the determinant row (diagnostic)."""
    delta_row_residual: float
    g_row_residual: float

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def assemble_dcct(v_star, A1, B1, B2, B3, C1, C2) -> tuple[float, float, float]:
    """``-v'(C2 + C1 (B1 A1 + B3)) / (v' C1 B2)``; returns ``(value, numerator, denominator)``."""
    v = np.asarray(v_star, dtype=float)
    num = float(v @ (C2 + C1 @ (B1 @ A1 + B3)))
    den = float(v @ (C1 @ B2))
    return -num / den, num, den


def cct_sensitivity(
    scenario: StagedScenario,
    i,
    cct: CctResult | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    transversality_tol: float = 1e-10,
) -> SensitivityBundle:
    """Analytic derivative of the fold-at-clearing CCT with respect to parameter ``i``."""
    model, p = scenario.model, scenario.p
    i = _param_index(model, i)
    if cct is None:
        cct = find_cct_event(scenario, settings, verify=False)
    ev = cct.fold_event
    if ev is None:
        raise ValueError("sensitivity needs an event-detected CCT with a fold event")
    traj = cct.trajectory
    if traj is None or traj.y_post is None:
        traj, _ = integrate_fault_with_shadow(scenario, settings)
    sep = pre_fault_sep(scenario)
    A1 = sep_sensitivity(model, p, i, sep)
    var = integrate_variational(scenario, i, t_end=ev.t_fold, settings=settings, trajectory=traj)
    B1, B2, B3 = clearing_blocks(var, ev.t_fold)
    x, y = ev.x_cl, ev.y_post_cl
    gy = model.gy(Stage.POST, x, y, p)
    C1 = model.gx(Stage.POST, x, y, p)
    C2 = model.gp(Stage.POST, x, y, p, i)
    null = left_null_vector(gy)
    v = null.v_star
    value, num, den = assemble_dcct(v, A1, B1, B2, B3, C1, C2)
    scale = np.linalg.norm(C1) * np.linalg.norm(B2)
    if abs(den) <= transversality_tol * max(scale, 1.0):
        raise TransversalityError(f"v' C1 B2 = {den:.3e}: fault-on trajectory tangent to the singular surface")

    # determinant row: fixes the kernel component of dy at the fold
    dx = B1 @ A1 + B2 * value + B3
    rhs = -(C1 @ dx + C2)
    dy_part = np.linalg.lstsq(gy, rhs, rcond=None)[0]
    w = np.linalg.svd(gy)[2][-1]
    ddelta = finite_difference_jacobian(
        lambda z: np.array([model.delta(Stage.POST, z[:model.n], z[model.n:], p)]),
        np.concatenate([x, y]))[0]
    Dx, Dy = ddelta[:model.n], ddelta[model.n:]
    h = 1e-6 * max(1.0, abs(p[i]))
    pp, pm = p.copy(), p.copy()
    pp[i] += h
    pm[i] -= h
    Dp = (model.delta(Stage.POST, x, y, pp) - model.delta(Stage.POST, x, y, pm)) / (2 * h)
    kernel_coeff = Dy @ w
    alpha = -(Dx @ dx + Dy @ dy_part + Dp) / kernel_coeff if abs(kernel_coeff) > 1e-12 else 0.0
    dy = dy_part + alpha * w
    return SensitivityBundle(
        param_index=i,
        param_name=model.param_names[i],
        A1=A1, B1=B1, B2=B2, B3=B3, C1=C1, C2=C2,
        v_star=v,
        sigma_min=null.sigma_min,
        numerator=num,
        denominator=den,
        dcct_dp=value,
        fold_dy_dp=dy,
        delta_row_residual=float(Dx @ dx + Dy @ dy + Dp),
        g_row_residual=float(np.linalg.norm(gy @ dy + C1 @ dx + C2)),
    )


def fd_cct_derivative(scenario: StagedScenario, i, delta: float = 1e-3,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Central difference of the event-detected CCT in parameter ``i``."""
    name = scenario.model.param_names[_param_index(scenario.model, i)]
    v = getattr(scenario.params, name)
    up = find_cct_event(scenario.with_param(name, v + delta), settings, verify=False).t_cct
    dn = find_cct_event(scenario.with_param(name, v - delta), settings, verify=False).t_cct
    return (up - dn) / (2 * delta)


SWEEP_COLUMNS = ("param_name", "param_value", "t_cct", "dcct_dp", "method", "mechanism",
                 "tangent_from_prev", "tangent_from_next", "error")


@dataclass
class SweepRow:
    param_name: str
    param_value: float
    t_cct: float = math.nan
    dcct_dp: float = math.nan
    method: str = "EventDetection"
    mechanism: str = ""
    tangent_from_prev: float = math.nan
    tangent_from_next: float = math.nan
    error: str = ""

    def cells(self) -> list[str]:
        out = []
        for col in SWEEP_COLUMNS:
            v = getattr(self, col)
            if isinstance(v, float):
                out.append("" if math.isnan(v) else fmt(v))
            else:
                out.append(str(v))
        return out


def _sweep_point(args) -> SweepRow:
    scenario, name, value, settings = args
    row = SweepRow(param_name=name, param_value=float(value))
    try:
        sc = scenario.with_param(name, value)
        res = find_cct_event(sc, settings, verify=False)
        row.t_cct = res.t_cct
        row.mechanism = res.mechanism
        row.dcct_dp = cct_sensitivity(sc, name, res, settings).dcct_dp
    except Exception as exc:  # recorded per row, never dropped
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def sweep(scenario: StagedScenario, name: str, values, settings: SolverSettings = DEFAULT_SETTINGS,
          jobs: int = 1) -> list[SweepRow]:
    """CCT and its sensitivity over a parameter grid, in input order.

    ``tangent_from_prev`` is the first-order prediction of a row's CCT from the
    previous row's value and slope; ``tangent_from_next`` likewise from the next.
    """
    _param_index(scenario.model, name)
    values = list(values)
    tasks = [(scenario, name, v, settings) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    for a, b in zip(rows, rows[1:]):
        if not a.error and not b.error:
            b.tangent_from_prev = a.t_cct + a.dcct_dp * (b.param_value - a.param_value)
            a.tangent_from_next = b.t_cct + b.dcct_dp * (a.param_value - b.param_value)
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(r.cells())
