"""Small dense linear algebra kernels, root finders and the RK4 step."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

PIVOT_TOL = 1e-13
SINGULARITY_TOL = 1e-8


class SingularMatrixError(ArithmeticError):
    """Raised by :func:`lu_solve` when a pivot falls below ``PIVOT_TOL``."""


class NotSingularError(ValueError):
    """The matrix passed to :func:`left_null_vector` is not numerically singular."""

    def __init__(self, sigma_min: float, tol: float):
        super().__init__(f"smallest singular value {sigma_min:.3e} exceeds tolerance {tol:.3e}")
        self.sigma_min = sigma_min


class ConvergenceError(ArithmeticError):
    """Newton failed on an algebraic constraint.

    ``last_y`` is the final iterate and ``last_det`` is ``|det(dg/dy)|`` there;
    a small ``last_det`` means the iteration ran into a fold.
    """

    def __init__(self, msg: str, last_y=None, last_det: float = float("nan")):
        super().__init__(msg)
        self.last_y = last_y
        self.last_det = last_det


class NoBracketError(ValueError):
    pass


def _square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def lu_solve(A, b) -> np.ndarray:
    """Solve ``A z = b`` by partially pivoted LU.

    Raises
    ------
    SingularMatrixError
        If any pivot of the factorisation is below ``PIVOT_TOL`` in magnitude.
    """
    A = _square(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 1:
        a = A[0, 0]
        if abs(a) < PIVOT_TOL:
            raise SingularMatrixError(f"pivot {a:.3e} below {PIVOT_TOL:.0e}")
        return b / a
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pmin = np.min(np.abs(np.diag(lu)))
    if pmin < PIVOT_TOL:
        raise SingularMatrixError(f"pivot {pmin:.3e} below {PIVOT_TOL:.0e}")
    return scipy.linalg.lu_solve((lu, piv), b)


def determinant(A) -> float:
    """Determinant; explicit cofactor formulas up to 3x3, LU beyond."""
    A = _square(A)
    m = A.shape[0]
    if m == 1:
        return float(A[0, 0])
    if m == 2:
        return float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    if m == 3:
        return float(
            A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
        )
    return float(np.linalg.det(A))


def adjugate(A) -> np.ndarray:
    """Classical adjoint, defined for singular matrices too.

    The adjugate of a 1x1 matrix is ``[[1]]`` whatever its entry.
    """
    A = _square(A)
    m = A.shape[0]
    if m == 1:
        return np.ones((1, 1))
    if m == 2:
        return np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]])
    C = np.empty_like(A)
    for i in range(m):
        for j in range(m):
            minor = np.delete(np.delete(A, i, axis=0), j, axis=1)
            C[i, j] = (-1) ** (i + j) * determinant(minor)
    return C.T


@dataclass(frozen=True)
class SvdNullResult:
    v_star: np.ndarray
    sigma_min: float


def left_null_vector(A, tol: float = SINGULARITY_TOL) -> SvdNullResult:
    """Left singular vector of the smallest singular value of ``A``.

    The sign is fixed so the first nonzero component is positive. ``tol`` is
    absolute on ``sigma_min``.
    """
    A = _square(A)
    U, s, _ = np.linalg.svd(A)
    k = int(np.argmin(s))
    sigma_min = float(s[k])
    if sigma_min > tol:
        raise NotSingularError(sigma_min, tol)
    v = U[:, k].copy()
    v /= np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return SvdNullResult(v_star=v, sigma_min=sigma_min)


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    z0,
    tol: float = 1e-10,
    maxiter: int = 50,
) -> np.ndarray:
    """Damped Newton for a square system; halves the step while the residual grows."""
    z = np.array(z0, dtype=float)
    r = residual(z)
    rn = np.linalg.norm(r)
    J = None
    for _ in range(maxiter):
        if rn <= tol:
            return z
        J = jacobian(z)
        try:
            dz = lu_solve(J, -r)
        except SingularMatrixError as exc:
            raise ConvergenceError(str(exc), z, abs(determinant(J))) from exc
        lam = 1.0
        while True:
            z_new = z + lam * dz
            r_new = residual(z_new)
            rn_new = np.linalg.norm(r_new)
            if np.isfinite(rn_new) and rn_new < rn or lam < 1e-4:
                break
            lam *= 0.5
        if not np.isfinite(rn_new):
            break
        z, r, rn = z_new, r_new, rn_new
    if rn <= tol:
        return z
    last_det = abs(determinant(J)) if J is not None else float("nan")
    raise ConvergenceError(f"Newton did not converge, residual {rn:.3e}", z, last_det)


def newton_algebraic(model, stage, x, y_guess, p, tol: float = 1e-10, maxiter: int = 50) -> np.ndarray:
    """Solve ``g_stage(x, y, p) = 0`` for ``y`` starting from ``y_guess``.

    On failure a :class:`ConvergenceError` carries the last iterate and the last
    ``|det(dg/dy)|``, which the simulator reads as a fold signal.
    """
    x = np.asarray(x, dtype=float)
    return newton_solve(
        lambda y: model.g(stage, x, y, p),
        lambda y: model.gy(stage, x, y, p),
        y_guess,
        tol=tol,
        maxiter=maxiter,
    )


def bracketed_root(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a scalar function on a sign-changing bracket (Brent's method)."""
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise NoBracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}")
    return brentq(fn, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def rk4_step(deriv: Callable[[float, np.ndarray], np.ndarray], t: float, x, h: float) -> np.ndarray:
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    k1 = deriv(t, x)
    k2 = deriv(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = deriv(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = deriv(t + h, x + h * k3)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite derivative in RK4 step")
    return out


def eigenvalues_small(A) -> list[complex]:
    """Eigenvalues of a k x k matrix with k <= 4; closed form for k <= 2."""
    A = _square(A)
    k = A.shape[0]
    if k > 4:
        raise ValueError("eigenvalues_small handles k <= 4")
    if k == 1:
        return [complex(A[0, 0])]
    if k == 2:
        tr = A[0, 0] + A[1, 1]
        det = determinant(A)
        disc = complex(tr * tr / 4.0 - det)
        r = disc**0.5
        return [tr / 2.0 + r, tr / 2.0 - r]
    return [complex(v) for v in np.linalg.eigvals(A)]


def finite_difference_jacobian(fun, z, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step scaled by ``max(1, |z_j|)``."""
    z = np.asarray(z, dtype=float)
    f0 = np.atleast_1d(fun(z))
    J = np.empty((f0.size, z.size))
    for j in range(z.size):
        hj = step * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += hj
        zm[j] -= hj
        J[:, j] = (np.atleast_1d(fun(zp)) - np.atleast_1d(fun(zm))) / (2 * hj)
    return J

