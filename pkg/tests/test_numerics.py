import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dae_cct.numerics import (
    ConvergenceError,
    NoBracketError,
    NotSingularError,
    SingularMatrixError,
    adjugate,
    bracketed_root,
    determinant,
    eigenvalues_small,
    left_null_vector,
    lu_solve,
    rk4_step,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_lu_solve_examples():
    b = np.array([3.0, -1.0, 2.0])
    assert np.allclose(lu_solve(np.eye(3), b), b)
    assert np.allclose(lu_solve([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])


def test_lu_solve_residual_random():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    b = rng.normal(size=5)
    z = lu_solve(A, b)
    assert np.linalg.norm(A @ z - b) <= 1e-10 * (1 + np.linalg.norm(b))


def test_lu_solve_singular_is_catchable():
    with pytest.raises(SingularMatrixError):
        lu_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    with pytest.raises(ArithmeticError):
        lu_solve([[0.0]], [1.0])


def test_determinant_examples():
    assert determinant([[3.5]]) == 3.5
    assert determinant(np.eye(4)) == pytest.approx(1.0)
    assert determinant([[1, 2], [3, 4]]) == -2


@pytest.mark.parametrize("c", [0.0, 2.5, -1.0])
def test_adjugate_1x1_convention(c):
    assert np.array_equal(adjugate([[c]]), [[1.0]])


def test_adjugate_examples():
    assert np.allclose(adjugate(np.eye(3)), np.eye(3))
    assert np.allclose(adjugate([[1, 2], [3, 4]]), [[4, -2], [-3, 1]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4).flatmap(lambda k: arrays(float, (k, k), elements=finite)), st.booleans())
def test_adjugate_identity(A, make_singular):
    if make_singular and A.shape[0] > 1:
        A[-1] = A[0]
    k = A.shape[0]
    lhs = adjugate(A) @ A
    rhs = determinant(A) * np.eye(k)
    scale = max(1.0, np.abs(A).max()) ** k
    assert np.allclose(lhs, rhs, atol=1e-10 * scale)


def test_left_null_vector_examples():
    r = left_null_vector([[0.0]])
    assert np.array_equal(r.v_star, [1.0])
    r = left_null_vector([[0.0, 0.0], [0.0, 5.0]])
    assert np.allclose(r.v_star, [1.0, 0.0])
    assert r.sigma_min == 0.0


def test_left_null_vector_rejects_regular():
    with pytest.raises(NotSingularError):
        left_null_vector(np.eye(2))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (3,), elements=st.floats(0.1, 10)), arrays(float, (3,), elements=st.floats(0.1, 10)))
def test_left_null_vector_scaling_invariance(rows, cols):
    # rank-2 matrix with left null direction u; scaling columns keeps u, scaling rows maps u -> D^-1 u
    rng = np.random.default_rng(0)
    B = rng.normal(size=(3, 2))
    C = rng.normal(size=(2, 3))
    A = B @ C
    v = left_null_vector(A, tol=1e-8).v_star
    A_cols = A * cols[None, :]
    assert np.allclose(left_null_vector(A_cols, tol=1e-6).v_star, v, atol=1e-8)
    A_rows = rows[:, None] * A
    w = left_null_vector(A_rows, tol=1e-6).v_star
    expected = v / rows
    expected /= np.linalg.norm(expected)
    expected *= np.sign(expected[np.flatnonzero(np.abs(expected) > 1e-14)[0]])
    assert np.allclose(w, expected, atol=1e-8)
    assert np.linalg.norm(w @ A_rows) <= 1e-8 * np.linalg.norm(A_rows)


def test_bracketed_root_examples():
    assert bracketed_root(lambda t: t - 1, 0, 2) == pytest.approx(1.0, abs=1e-12)
    assert bracketed_root(lambda t: t * t - 2, 1, 2, tol=1e-10) == pytest.approx(2**0.5, abs=1e-9)
    r = bracketed_root(lambda t: 2 * t + np.exp(-t) - 2.655166, 0, 3)
    assert 2 * r + np.exp(-r) == pytest.approx(2.655166, abs=1e-12)
    assert r == pytest.approx(1.1729, abs=1e-4)


def test_bracketed_root_no_bracket():
    with pytest.raises(NoBracketError):
        bracketed_root(lambda t: t * t + 1, -1, 1)


def test_rk4_examples():
    x = np.array([1.0, 2.0])
    assert np.array_equal(rk4_step(lambda t, x: np.zeros(2), 0.0, x, 0.1), x)
    assert rk4_step(lambda t, x: np.ones(1), 0.0, np.zeros(1), 0.1)[0] == pytest.approx(0.1, abs=1e-15)
    assert rk4_step(lambda t, x: x, 0.0, np.ones(1), 0.1)[0] == pytest.approx(np.exp(0.1), abs=1e-7)


def test_rk4_nonfinite():
    with pytest.raises(FloatingPointError):
        rk4_step(lambda t, x: np.array([np.inf]), 0.0, np.ones(1), 0.1)
    with pytest.raises(ValueError):
        rk4_step(lambda t, x: x, 0.0, np.ones(1), 0.0)


def rk4_global_error(h):
    x, t = np.ones(1), 0.0
    for _ in range(int(round(1 / h))):
        x = rk4_step(lambda t, x: x, t, x, h)
        t += h
    return abs(x[0] - np.e)


def test_rk4_fourth_order():
    ratio = rk4_global_error(0.1) / rk4_global_error(0.05)
    assert ratio >= 15


@pytest.mark.parametrize(
    "A, expected",
    [
        (np.diag([1.0, -2.0]), [1.0, -2.0]),
        (np.array([[0.0, 1.0], [-1.0, 0.0]]), [1j, -1j]),
        (np.array([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0]),
    ],
)
def test_eigenvalues_small(A, expected):
    got = sorted(eigenvalues_small(A), key=lambda z: (z.real, z.imag))
    exp = sorted(map(complex, expected), key=lambda z: (z.real, z.imag))
    assert np.allclose(got, exp)


def test_eigenvalues_small_3x3_residual():
    A = np.array([[1.0, 2.0, 0.0], [0.0, 3.0, 1.0], [1.0, 0.0, -1.0]])
    for lam in eigenvalues_small(A):
        assert abs(np.linalg.det(A - lam * np.eye(3))) < 1e-8
    with pytest.raises(ValueError):
        eigenvalues_small(np.eye(5))


def test_convergence_error_carries_iterate():
    from dae_cct.numerics import newton_solve

    with pytest.raises(ConvergenceError) as info:
        newton_solve(lambda z: z**2 + 1, lambda z: np.diag(2 * z), np.array([0.5]), maxiter=20)
    assert info.value.last_y is not None
