"""Equilibria of one stage of a DAE (the pre-fault operating point)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DaeModel, Stage
from .numerics import SINGULARITY_TOL, newton_solve


class SingularEquilibriumError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SepSolution:
    x_s: np.ndarray
    y_s: np.ndarray
    residual: float
    delta: float
    """``det(dg/dy)`` at the equilibrium; its magnitude scales the singularity tolerance."""


def find_sep(model: DaeModel, stage, p, guess, tol: float = 1e-10) -> SepSolution:
    """Damped Newton on the stacked system ``[f; g] = 0``.

    ``guess`` is ``(x, y)``. Newton is local: a guess on the low-voltage branch
    returns the low-voltage equilibrium, so branch choice is the caller's job.
    """
    stage = Stage.parse(stage)
    n = model.n
    x_guess, y_guess = guess
    z0 = np.concatenate([np.asarray(x_guess, float), np.asarray(y_guess, float)])

    def residual(z):
        x, y = z[:n], z[n:]
        return np.concatenate([model.f(stage, x, y, p), model.g(stage, x, y, p)])

    def jacobian(z):
        x, y = z[:n], z[n:]
        return np.block([
            [model.fx(stage, x, y, p), model.fy(stage, x, y, p)],
            [model.gx(stage, x, y, p), model.gy(stage, x, y, p)],
        ])

    z = newton_solve(residual, jacobian, z0, tol=tol)
    x, y = z[:n], z[n:]
    delta = model.delta(stage, x, y, p)
    scale = max(1.0, np.linalg.norm(model.gy(stage, x, y, p)))
    # at a fold the residual is quadratic in the error, so det is only resolved to ~sqrt(tol)
    if abs(delta) <= max(SINGULARITY_TOL, 10 * np.sqrt(tol)) * scale:
        raise SingularEquilibriumError(f"equilibrium lies on the singular surface (det = {delta:.3e})")
    return SepSolution(x_s=x, y_s=y, residual=float(np.linalg.norm(residual(z))), delta=delta)

