import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from dae_cct.geometry import (
    Category,
    ContinuationError,
    PseudoType,
    classify_singular_point,
    kappa,
    locate_pseudo_equilibria,
    trace_singular_set,
    transformed_field,
    write_classification_csv,
)
from dae_cct.model import Stage, smib_model
from dae_cct.numerics import adjugate

M = smib_model()
P = M.p0
X1S, YS = oracles.fold()
FOLD_X2 = -0.1  # f1 = 0 on the fold line at base parameters


def _consistent_y(x):
    # high voltage root of g_post at angle x1
    c = np.cos(x[0])
    disc = c * c - 4 * 0.1 * 0.5
    return np.array([(c + np.sqrt(disc)) / 2])


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 1.05), st.floats(-2, 2), st.floats(0.2, 1.5))
def test_transformed_field_parallel(x1, x2, y):
    x, yy = np.array([x1, x2]), np.array([y])
    xd, yd = transformed_field(M, Stage.POST, x, yy, P)
    f = M.f(Stage.POST, x, yy, P)
    d = M.delta(Stage.POST, x, yy, P)
    if abs(d) < 1e-6:
        return
    ydot = -np.linalg.solve(M.gy(Stage.POST, x, yy, P), M.gx(Stage.POST, x, yy, P) @ f)
    ref = np.concatenate([f, ydot])
    got = np.concatenate([xd, yd])
    assert np.linalg.norm(got - d * ref) <= 1e-8 * max(1.0, np.linalg.norm(d * ref))


def test_adjugate_form_of_kappa():
    x, y = np.array([0.4, 0.2]), np.array([0.8])
    k = kappa(M, "post", x, y, P)
    ref = adjugate(M.gy(Stage.POST, x, y, P)) @ M.gx(Stage.POST, x, y, P) @ M.f(Stage.POST, x, y, P)
    assert k == pytest.approx(ref)


def test_regular_point():
    x = np.array([0.3, 0.0])
    c = classify_singular_point(M, "post", x, _consistent_y(x), P)
    assert c.category is Category.REGULAR and not c.is_singular


def test_singular_point_off_pseudo():
    c = classify_singular_point(M, "post", np.array([X1S, 0.5]), np.array([YS]), P)
    assert c.category is Category.SINGULAR
    assert not c.is_pseudo_ep and not c.is_semi_singular


def test_pseudo_equilibrium_is_sink():
    c = classify_singular_point(M, "post", np.array([X1S, FOLD_X2]), np.array([YS]), P)
    assert c.category is Category.PSEUDO_EP
    assert c.is_semi_singular and c.is_pseudo_ep
    assert c.pseudo_type is PseudoType.SINK
    assert len(c.nonzero_eigs) == 2
    assert c.nonzero_eigs[0].real == pytest.approx(-0.3578, abs=1e-3)


def test_semi_singular_iff_pseudo_for_smib():
    # one algebraic variable: kappa is scalar, so the two conditions coincide
    for x2 in np.linspace(-1, 1, 21):
        c = classify_singular_point(M, "post", np.array([X1S, x2]), np.array([YS]), P)
        assert c.is_singular
        assert c.is_semi_singular == c.is_pseudo_ep


def test_trace_keeps_fold_coordinates():
    pts = trace_singular_set(M, "post", P, (np.array([X1S, 0.0]), np.array([YS])), arc_step=0.1, count=15)
    assert len(pts) == 15
    x1 = np.array([p[0][0] for p in pts])
    x2 = np.array([p[0][1] for p in pts])
    y = np.array([p[1][0] for p in pts])
    assert np.max(np.abs(x1 - X1S)) <= 1e-9
    assert np.max(np.abs(y - YS)) <= 1e-9
    assert np.all(np.diff(x2) > 0)
    assert x2[-1] - x2[0] == pytest.approx(1.4, rel=1e-6)


def test_trace_reverse_direction():
    seed = (np.array([X1S, 0.0]), np.array([YS]))
    fwd = trace_singular_set(M, "post", P, seed, arc_step=0.1, count=4)
    back = trace_singular_set(M, "post", P, seed, arc_step=-0.1, count=4)
    assert back[-1][0][1] == pytest.approx(-fwd[-1][0][1], abs=1e-9)


def test_trace_bad_seed():
    with pytest.raises(ContinuationError):
        trace_singular_set(M, "post", P, (np.array([3.0, 0.0]), np.array([5.0])), count=3)


def test_trace_requires_curve():
    with pytest.raises(ValueError):
        trace_singular_set(M, "post", P, (np.array([X1S, 0.0]), np.array([YS])), pinned={0: X1S, 1: 0.0})


def test_locate_pseudo_on_traced_set():
    pts = trace_singular_set(M, "post", P, (np.array([X1S, -0.5]), np.array([YS])), arc_step=0.1, count=10)
    found = locate_pseudo_equilibria(M, "post", P, pts)
    assert len(found) == 1
    x, y = found[0]
    assert x == pytest.approx([X1S, FOLD_X2], abs=1e-9)
    assert y == pytest.approx([YS], abs=1e-9)


def test_classification_csv(tmp_path):
    rows = [classify_singular_point(M, "post", np.array([X1S, v]), np.array([YS]), P) for v in (0.5, FOLD_X2)]
    path = tmp_path / "c.csv"
    write_classification_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,y1,delta,kappa_norm,category,semi_singular,pseudo_ep,pseudo_type,eig1,eig2"
    assert lines[2].split(",")[5:9] == ["PseudoEP", "1", "1", "Sink"]
