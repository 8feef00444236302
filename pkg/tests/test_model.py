import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dae_cct.equilibrium import SingularEquilibriumError, find_sep
from dae_cct.model import NoFoldError, ParameterSet, Stage, smib_model, smib_scenario, smib_singular_locus
from dae_cct.numerics import ConvergenceError, finite_difference_jacobian, newton_algebraic

SEP = np.array([0.279566, 0.0]), np.array([0.905986])


def test_parameter_set_views():
    ps = ParameterSet()
    assert list(ps.vector) == [0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 0.1]
    q = ps.with_value("E", 1.3)
    diff = np.flatnonzero(q.vector != ps.vector)
    assert list(diff) == [ParameterSet.index("E")]
    assert ParameterSet.from_vector(q.vector) == q


@pytest.mark.parametrize("bad", [dict(X=0), dict(M=-1), dict(E=0), dict(Ql=-0.1), dict(X=float("nan"))])
def test_parameter_set_rejects(bad):
    with pytest.raises(ValueError):
        ParameterSet(**bad)


def test_unknown_parameter_name():
    with pytest.raises(KeyError):
        ParameterSet.index("Q")


def test_base_sep_residuals():
    m = smib_model()
    p = m.p0
    # the 6-decimal rounding of the angle leaves a residual just above 1e-5
    assert np.linalg.norm(m.f(Stage.PRE, *SEP, p)) <= 2e-5
    x1, x2, y = oracles.sep()
    assert np.linalg.norm(m.f(Stage.PRE, np.array([x1, x2]), np.array([y]), p)) <= 1e-12
    assert abs(m.g(Stage.PRE, np.array([x1, x2]), np.array([y]), p)[0]) <= 1e-12


def test_sep_closed_form_quadratic():
    a, b, c = oracles.sep_quadratic()
    assert (b, c) == pytest.approx((-0.9, 0.065))
    assert oracles.sep() == pytest.approx((0.279570, 0.0, 0.905986), abs=1e-6)


def test_fault_constraint_is_voltage():
    m = smib_model()
    for x in ([0.3, 0.0], [2.0, -1.0]):
        assert m.g(Stage.FAULT, np.array(x), np.zeros(1), m.p0)[0] == 0.0


def test_dgdy_at_sep():
    m = smib_model()
    x1, x2, y = oracles.sep()
    gy = m.gy(Stage.PRE, np.array([x1, x2]), np.array([y]), m.p0)[0, 0]
    assert gy == pytest.approx((math.cos(x1) - 2 * y) / 0.5, abs=1e-12)
    assert gy == pytest.approx(-1.7016, abs=1e-4)


def test_post_aliases_pre():
    m = smib_model()
    x, y = np.array([0.7, 0.2]), np.array([0.6])
    for fn in ("g", "gx", "gy"):
        assert np.array_equal(getattr(m, fn)(Stage.PRE, x, y, m.p0), getattr(m, fn)(Stage.POST, x, y, m.p0))


point = st.tuples(st.floats(-1.4, 1.4), st.floats(-2, 2), st.floats(0.05, 1.5))
param_vals = st.fixed_dictionaries({
    "X": st.floats(0.2, 1.0), "Pm": st.floats(0.1, 0.9), "E": st.floats(0.8, 1.5),
    "M": st.floats(0.5, 3), "Dl": st.floats(0.5, 2), "Dg": st.floats(0.1, 2), "Ql": st.floats(0.0, 0.3),
})


def _rel_close(a, b, rtol):
    return np.all(np.abs(a - b) <= rtol * np.maximum(1.0, np.abs(b)))


@settings(max_examples=40, deadline=None)
@given(point, param_vals, st.sampled_from(list(Stage)))
def test_jacobians_match_central_differences(pt, pv, stage):
    m = smib_model(ParameterSet(**pv))
    p = m.p0
    x, y = np.array(pt[:2]), np.array(pt[2:])
    fx = finite_difference_jacobian(lambda xx: m.f(stage, xx, y, p), x)
    fy = finite_difference_jacobian(lambda yy: m.f(stage, x, yy, p), y)
    gx = finite_difference_jacobian(lambda xx: m.g(stage, xx, y, p), x)
    gy = finite_difference_jacobian(lambda yy: m.g(stage, x, yy, p), y)
    assert _rel_close(m.fx(stage, x, y, p), fx, 1e-5)
    assert _rel_close(m.fy(stage, x, y, p), fy, 1e-5)
    assert _rel_close(m.gx(stage, x, y, p), gx, 1e-5)
    assert _rel_close(m.gy(stage, x, y, p), gy, 1e-5)
    for i in range(m.np):
        fp = finite_difference_jacobian(lambda pp: m.f(stage, x, y, np.r_[p[:i], pp, p[i + 1:]]), p[i:i + 1])[:, 0]
        gp = finite_difference_jacobian(lambda pp: m.g(stage, x, y, np.r_[p[:i], pp, p[i + 1:]]), p[i:i + 1])[:, 0]
        assert _rel_close(m.fp(stage, x, y, p, i), fp, 1e-5)
        assert _rel_close(m.gp(stage, x, y, p, i), gp, 1e-5)


def test_parameter_partials_exact_zero_when_absent():
    m = smib_model()
    x, y = np.array([0.4, 0.1]), np.array([0.8])
    for name in ("Pm", "M", "Dl", "Dg"):
        assert np.array_equal(m.gp(Stage.PRE, x, y, m.p0, m.param_names.index(name)), [0.0])
    assert np.array_equal(m.fp(Stage.PRE, x, y, m.p0, m.param_names.index("Ql")), [0.0, 0.0])
    for i in range(m.np):
        assert np.array_equal(m.gp(Stage.FAULT, x, y, m.p0, i), [0.0])


def test_singular_locus_base():
    x1, y = smib_singular_locus(ParameterSet())
    assert (x1, y) == pytest.approx((1.107149, 0.223607), abs=1e-6)
    m = smib_model()
    x, yy = np.array([x1, 0.0]), np.array([y])
    assert abs(m.g(Stage.PRE, x, yy, m.p0)[0]) <= 1e-12
    assert abs(m.delta(Stage.PRE, x, yy, m.p0)) <= 1e-12


def test_singular_locus_limits():
    assert smib_singular_locus(ParameterSet(Ql=0.0)) == pytest.approx((math.pi / 2, 0.0))
    ps = ParameterSet(E=2 * math.sqrt(0.1 * 0.5))
    assert smib_singular_locus(ps)[0] == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(NoFoldError):
        smib_singular_locus(ParameterSet(E=0.4))


@settings(max_examples=50, deadline=None)
@given(param_vals)
def test_singular_locus_residuals(pv):
    ps = ParameterSet(**pv)
    if ps.E**2 < 4 * ps.Ql * ps.X:
        return
    x1, y = smib_singular_locus(ps)
    m = smib_model(ps)
    x, yy = np.array([x1, 0.0]), np.array([y])
    assert abs(m.g(Stage.POST, x, yy, m.p0)[0]) <= 1e-12
    assert abs(m.delta(Stage.POST, x, yy, m.p0)) <= 1e-12


def test_newton_algebraic_examples():
    m = smib_model()
    y = newton_algebraic(m, Stage.FAULT, np.array([0.3, 0.0]), np.array([0.7]), m.p0)
    assert y[0] == 0.0
    y = newton_algebraic(m, Stage.PRE, np.array([0.279566, 0.0]), np.array([1.0]), m.p0)
    assert y[0] == pytest.approx(0.905986, abs=1e-6)
    with pytest.raises(ConvergenceError) as info:
        newton_algebraic(m, Stage.PRE, np.array([1.2, 0.0]), np.array([1.0]), m.p0)
    assert info.value.last_det < 1.0


def test_find_sep_examples():
    sc = smib_scenario()
    sol = find_sep(sc.model, "pre", sc.p, sc.sep_guess())
    assert np.r_[sol.x_s, sol.y_s] == pytest.approx(oracles.sep(), abs=1e-8)
    assert sol.residual <= 1e-10
    sc0 = smib_scenario(Pm=0.0)
    sol0 = find_sep(sc0.model, "pre", sc0.p, sc0.sep_guess())
    assert np.r_[sol0.x_s, sol0.y_s] == pytest.approx([0.0, 0.0, (1 + math.sqrt(0.8)) / 2], abs=1e-8)


def test_find_sep_low_branch_is_callers_problem():
    sc = smib_scenario()
    low = find_sep(sc.model, "pre", sc.p, (np.array([1.0, 0.0]), np.array([0.25])))
    _, b, c = oracles.sep_quadratic()
    u_low = (-b - math.sqrt(b * b - 4 * c)) / 2
    assert low.y_s[0] == pytest.approx(math.sqrt(u_low), abs=1e-10)


def test_find_sep_rejects_singular():
    # E just above the nose: the only equilibria coincide with the fold
    sc = smib_scenario(Pm=0.0, E=2 * math.sqrt(0.05))
    with pytest.raises((SingularEquilibriumError, ConvergenceError)):
        find_sep(sc.model, "pre", sc.p, (np.zeros(2), np.array([0.2236])))
