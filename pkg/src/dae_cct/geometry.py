"""Singular-surface geometry: the time-rescaled field and point classification.

The rescaled field ``(det * f, -adj(gy) gx f)`` is the DAE flow multiplied by
``det(dg/dy)``; it stays bounded on the singular surface and has its own
equilibria there (pseudo equilibria).
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .model import DaeModel, Stage
from .numerics import adjugate, eigenvalues_small, finite_difference_jacobian, newton_solve, ConvergenceError
from .simulator import fmt

EIG_CUTOFF = 1e-6


class Category(enum.Enum):
    REGULAR = "Regular"
    SINGULAR = "Singular"
    SEMI_SINGULAR = "SemiSingular"
    PSEUDO_EP = "PseudoEP"


class PseudoType(enum.Enum):
    SOURCE = "Source"
    SINK = "Sink"
    SADDLE = "Saddle"
    UNCLASSIFIABLE = "Unclassifiable"


class ContinuationError(ArithmeticError):
    pass


def kappa(model: DaeModel, stage, x, y, p) -> np.ndarray:
    """``adj(dg/dy) (dg/dx) f``."""
    stage = Stage.parse(stage)
    return adjugate(model.gy(stage, x, y, p)) @ model.gx(stage, x, y, p) @ model.f(stage, x, y, p)


def transformed_field(model: DaeModel, stage, x, y, p):
    stage = Stage.parse(stage)
    d = model.delta(stage, x, y, p)
    return d * model.f(stage, x, y, p), -kappa(model, stage, x, y, p)


def _stacked_field(model, stage, p):
    n = model.n

    def fn(z):
        xd, yd = transformed_field(model, stage, z[:n], z[n:], p)
        return np.concatenate([xd, yd])
    return fn


@dataclass(frozen=True)
class SingularPointClass:
    x: np.ndarray
    y: np.ndarray
    delta: float
    kappa: np.ndarray
    g_residual: float
    semi_singular_residual: float
    category: Category
    is_singular: bool
    is_semi_singular: bool
    is_pseudo_ep: bool
    pseudo_type: PseudoType | None = None
    nonzero_eigs: tuple[complex, ...] | None = None


def _project(model, stage, p, x, y, maxiter=1):
    """Minimum-norm Gauss-Newton steps onto ``g = 0`` in the joint ``(x, y)`` space."""
    n = model.n
    z = np.concatenate([x, y])
    for _ in range(maxiter):
        r = model.g(stage, z[:n], z[n:], p)
        J = np.hstack([model.gx(stage, z[:n], z[n:], p), model.gy(stage, z[:n], z[n:], p)])
        z = z - np.linalg.pinv(J) @ r
    return z[:n], z[n:]


def classify_singular_point(model: DaeModel, stage, x, y, p, tol: float = 1e-8,
                            eig_cutoff: float = EIG_CUTOFF) -> SingularPointClass:
    """Classify a point as regular, singular, semi-singular or pseudo-equilibrium.

    Pseudo equilibria are typed from the eigenvalues of the rescaled field's
    Jacobian in the full ``(x, y)`` space; eigenvalues below ``eig_cutoff`` in
    modulus are centre directions and dropped, the remaining pair decides
    source, sink or saddle.
    """
    stage = Stage.parse(stage)
    x, y = _project(model, stage, p, np.asarray(x, float), np.asarray(y, float))
    d = model.delta(stage, x, y, p)
    k = kappa(model, stage, x, y, p)
    gres = float(np.linalg.norm(model.g(stage, x, y, p)))
    ddelta_dy = finite_difference_jacobian(
        lambda yy: np.array([model.delta(stage, x, yy, p)]), y)[0]
    semi_res = float(abs(ddelta_dy @ k))
    singular = abs(d) <= tol and gres <= tol
    semi = singular and semi_res <= tol
    pseudo = singular and float(np.linalg.norm(k)) <= tol
    if not singular:
        cat = Category.REGULAR
    elif pseudo:
        cat = Category.PSEUDO_EP
    elif semi:
        cat = Category.SEMI_SINGULAR
    else:
        cat = Category.SINGULAR
    ptype, eigs = None, None
    if pseudo:
        J = finite_difference_jacobian(_stacked_field(model, stage, p), np.concatenate([x, y]))
        ev = eigenvalues_small(J) if J.shape[0] <= 4 else [complex(v) for v in np.linalg.eigvals(J)]
        sig = sorted((e for e in ev if abs(e) > eig_cutoff), key=lambda e: (e.real, e.imag))
        eigs = tuple(sig)
        if len(sig) != 2:
            ptype = PseudoType.UNCLASSIFIABLE
        elif all(e.real > 0 for e in sig):
            ptype = PseudoType.SOURCE
        elif all(e.real < 0 for e in sig):
            ptype = PseudoType.SINK
        else:
            ptype = PseudoType.SADDLE
    return SingularPointClass(
        x=x, y=y, delta=float(d), kappa=k, g_residual=gres, semi_singular_residual=semi_res,
        category=cat, is_singular=singular, is_semi_singular=semi, is_pseudo_ep=pseudo,
        pseudo_type=ptype, nonzero_eigs=eigs,
    )


def trace_singular_set(model: DaeModel, stage, p, seed, arc_step: float = 0.05, count: int = 20,
                       pinned: dict[int, float] | None = None, tol: float = 1e-10,
                       max_rejects: int = 10) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pseudo-arclength continuation of ``{g = 0, det(dg/dy) = 0}`` in ``(x, y)``.

    ``seed`` is ``(x, y)``. The set is a curve only when ``n + m - (m + 1) = 1``;
    for larger ``n`` the extra dynamic states must be listed in ``pinned``
    (index -> value). The first tangent is oriented so its largest component
    is positive; a negative ``arc_step`` walks the other way. Returns
    ``count`` points starting with the projected seed.
    """
    stage = Stage.parse(stage)
    n, m = model.n, model.m
    pinned = dict(pinned or {})
    free = [j for j in range(n + m) if j not in pinned]
    if len(free) - (m + 1) != 1:
        raise ValueError(f"singular set is {len(free) - m - 1}-dimensional here; pin dynamic states to get a curve")
    x_seed, y_seed = seed
    base = np.concatenate([np.asarray(x_seed, float), np.asarray(y_seed, float)])
    for j, v in pinned.items():
        base[j] = v

    def full(u):
        z = base.copy()
        z[free] = u
        return z

    def F(u):
        z = full(u)
        return np.concatenate([model.g(stage, z[:n], z[n:], p), [model.delta(stage, z[:n], z[n:], p)]])

    def JF(u):
        return finite_difference_jacobian(F, u, 1e-7)

    def tangent(u, prev=None):
        t = np.linalg.svd(JF(u))[2][-1]
        if prev is None:
            if t[np.argmax(np.abs(t))] < 0:
                t = -t
        elif t @ prev < 0:
            t = -t
        return t / np.linalg.norm(t)

    u = base[free]
    # Gauss-Newton projection of the seed
    for _ in range(30):
        r = F(u)
        if np.linalg.norm(r) <= tol:
            break
        u = u - np.linalg.pinv(JF(u)) @ r
    if not np.linalg.norm(F(u)) <= tol:
        raise ContinuationError(f"seed does not project onto the singular set (residual {np.linalg.norm(F(u)):.3e})")

    pts = [u]
    tan = tangent(u)
    ds = arc_step
    rejects = 0
    while len(pts) < count:
        pred = pts[-1] + ds * tan

        def G(v, pred=pred, tan=tan):
            return np.concatenate([F(v), [tan @ (v - pred)]])

        try:
            v = newton_solve(G, lambda v: finite_difference_jacobian(G, v, 1e-7), pred, tol=tol, maxiter=20)
        except ConvergenceError:
            rejects += 1
            if rejects >= max_rejects:
                raise ContinuationError(f"continuation stalled after {len(pts)} points") from None
            ds *= 0.5
            continue
        rejects = 0
        pts.append(v)
        tan = tangent(v, tan)
        ds = arc_step if abs(ds) < abs(arc_step) else ds
    return [(full(u)[:n], full(u)[n:]) for u in pts]


REPORT_COLUMNS_BASE = ("delta", "kappa_norm", "category", "semi_singular", "pseudo_ep",
                       "pseudo_type", "eig1", "eig2")


def _cfmt(z: complex) -> str:
    return f"{z.real:.9g}{z.imag:+.9g}j"


def write_classification_csv(rows: list[SingularPointClass], path) -> None:
    n, m = len(rows[0].x), len(rows[0].y)
    header = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(m)] + list(REPORT_COLUMNS_BASE)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            eigs = list(r.nonzero_eigs or ())[:2]
            eigs += [None] * (2 - len(eigs))
            w.writerow([*map(fmt, r.x), *map(fmt, r.y), fmt(r.delta), fmt(np.linalg.norm(r.kappa)),
                        r.category.value, int(r.is_semi_singular), int(r.is_pseudo_ep),
                        r.pseudo_type.value if r.pseudo_type else "",
                        *("" if e is None else _cfmt(e) for e in eigs)])


def locate_pseudo_equilibria(model: DaeModel, stage, p, points, tol: float = 1e-12):
    """Pseudo equilibria between consecutive traced singular points.

    Each sign change of a ``kappa`` component along ``points`` seeds a
    Gauss-Newton solve of ``g = 0, det = 0, kappa = 0`` in ``(x, y)``.
    """
    stage = Stage.parse(stage)
    n = model.n

    def F(z):
        x, y = z[:n], z[n:]
        return np.concatenate([model.g(stage, x, y, p), [model.delta(stage, x, y, p)],
                               kappa(model, stage, x, y, p)])

    found = []
    ks = [kappa(model, stage, x, y, p) for x, y in points]
    for j in range(len(points) - 1):
        # <= 0 also catches a pseudo equilibrium sitting on a traced point
        if not np.any(np.sign(ks[j]) * np.sign(ks[j + 1]) <= 0):
            continue
        z0 = 0.5 * (np.concatenate(points[j]) + np.concatenate(points[j + 1]))
        z = z0
        for _ in range(50):
            r = F(z)
            if np.linalg.norm(r) <= tol:
                break
            z = z - np.linalg.pinv(finite_difference_jacobian(F, z, 1e-7)) @ r
        if np.linalg.norm(F(z)) <= 1e-9 and not any(np.linalg.norm(z - np.concatenate(q)) <= 1e-9 for q in found):
            found.append((z[:n], z[n:]))
    return found
