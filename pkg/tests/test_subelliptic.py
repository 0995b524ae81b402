import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobdub import Ball, SubellipticParams, WeightFamily, build_grid
from sobdub.constants import DivergentIteration
from sobdub.cutoffs import build_family
from sobdub.subelliptic import (
    MatrixField,
    _subunit_cost,
    boundary_distance,
    build_accumulating_family,
    dilation_check,
    fit_KN,
    metric_volumes,
    node_at,
    q_gradient_norm,
    subelliptic_chain_certify,
    subunit_metric,
)

P228 = SubellipticParams(2, 2, 8, K=1, N=2)


@pytest.fixture(scope="module")
def square():
    return build_grid([(-1.0, 1.0), (-1.0, 1.0)], 101, WeightFamily("lebesgue", dim=2))


@pytest.fixture(scope="module")
def octile(square):
    space = subunit_metric(square, MatrixField.identity(), stencil=1)
    return space, node_at(space, (0.0, 0.0))


def test_q_gradient_examples(square):
    x, y = square.coords[:, 0], square.coords[:, 1]
    g = q_gradient_norm(square, x, MatrixField.identity())
    assert np.allclose(g, 1.0, rtol=1e-12)
    assert np.allclose(q_gradient_norm(square, y, MatrixField.grushin()), np.abs(x), rtol=1e-12, atol=1e-15)
    assert not q_gradient_norm(square, np.full(square.n, 2.0), MatrixField.grushin()).any()


def test_q_gradient_identity_is_euclidean_gradient(square):
    x, y = square.coords[:, 0], square.coords[:, 1]
    u = 3 * x - 2 * y + 1
    assert np.allclose(q_gradient_norm(square, u, MatrixField.identity()), math.sqrt(13), rtol=1e-12)


def test_degenerate_grid_rejected():
    thin = build_grid([(0, 1), (0, 1)], (16, 16), WeightFamily("lebesgue", dim=2))
    object.__setattr__(thin, "shape", (256, 1))
    with pytest.raises(ValueError):
        q_gradient_norm(thin, np.zeros(thin.n), MatrixField.identity())


def test_matrix_fields():
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    for name in ("identity", "grushin"):
        assert MatrixField.from_name(name).check_psd(pts)
    assert MatrixField.grushin().sup_norm(np.array([[1.5, 0.0]])) == pytest.approx(2.25)
    with pytest.raises(ValueError):
        MatrixField.from_name("nope")


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), e=st.floats(-3, 3),
    dx=st.floats(-1, 1), dy=st.floats(-1, 1),
)
def test_edge_cost_is_minimal_control_norm(a, b, c, e, dx, dy):
    """cost = min |xi| with Q^(1/2) xi = delta, computed with a pseudo-inverse."""
    M = np.array([[a, b], [c, e]])
    Q = M @ M.T
    delta = np.array([dx, dy])
    w, V = np.linalg.eigh(Q)
    w = np.clip(w, 0, None)
    root = (V * np.sqrt(w)) @ V.T
    xi = np.linalg.pinv(root, rcond=1e-10) @ delta
    reachable = np.linalg.norm(root @ xi - delta) <= 1e-9 * max(1.0, np.linalg.norm(delta))
    cost = _subunit_cost(delta[None, :], Q[None, :, :])[0]
    well_conditioned = w.max() > 0 and w.min() > 1e-6 * w.max()
    if w.max() == 0:
        assert math.isinf(cost) or np.linalg.norm(delta) == 0
    elif well_conditioned:
        assert cost == pytest.approx(np.linalg.norm(xi), rel=1e-6, abs=1e-12)
    elif np.linalg.matrix_rank(Q, tol=1e-12 * w.max()) == 1 and not reachable:
        assert math.isinf(cost)


def test_rank_one_cost():
    Q = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    assert _subunit_cost(np.array([[0.3, 0.0]]), Q)[0] == pytest.approx(0.3)
    assert math.isinf(_subunit_cost(np.array([[0.0, 0.3]]), Q)[0])
    assert math.isinf(_subunit_cost(np.array([[0.1, 0.1]]), np.zeros((1, 2, 2)))[0])


def test_identity_metric_within_octile_bound(square, octile):
    space, o = octile
    d = space.center_distances(o)
    e = np.linalg.norm(square.coords - square.coords[o], axis=1)
    mask = e > 0
    ratio = d[mask] / e[mask]
    assert ratio.min() >= 1 - 1e-12
    assert ratio.max() <= 1.0824 + 1e-9


def test_larger_stencil_is_closer_to_euclidean(square):
    space = subunit_metric(square, MatrixField.identity(), stencil=4)
    o = node_at(space, (0.0, 0.0))
    e = np.linalg.norm(square.coords - square.coords[o], axis=1)
    mask = e > 0
    assert (space.center_distances(o)[mask] / e[mask]).max() < 1.01


def test_metric_is_symmetric(octile):
    space, _ = octile
    assert space.check_metric(triples=50)


def test_grushin_lower_bound_by_sup_norm(grushin):
    space, Q, o = grushin
    d = space.center_distances(o)
    e = np.linalg.norm(space.coords - space.coords[o], axis=1)
    sup = math.sqrt(Q.sup_norm(space.coords))
    assert np.all(d >= e / sup * (1 - 1e-12))


def test_grushin_horizontal_segments(grushin):
    space, _, o = grushin
    d = space.center_distances(o)
    for x in (0.2, 0.5, 1.0):
        k = node_at(space, (x, 0.0))
        assert d[k] == pytest.approx(abs(space.coords[k, 0]), rel=0.02)


def test_grushin_vertical_distance_scaling(grushin):
    # d(0, (0, t)) scales like t**(1/2) under the dilations
    space, _, o = grushin
    d = space.center_distances(o)
    a, b = d[node_at(space, (0.0, 0.012))], d[node_at(space, (0.0, 0.048))]
    assert b / a == pytest.approx(2.0, rel=0.03)
    assert dilation_check(space, o, (0.2, 0.012), 2.0)["rel_err"] <= 0.03


def test_grushin_volume_ratios(grushin):
    space, _, o = grushin
    for row in metric_volumes(space, o, (0.2, 0.35, 0.5)):
        assert row["ratio"] == pytest.approx(8.0, rel=0.05)


def test_family_identity_reduces_to_cutoffs(octile):
    space, o = octile
    ball = Ball(o, 0.12)
    fam = build_accumulating_family(space, MatrixField.identity(), ball, J=3)
    ref = build_family(space, ball, J_max=3)
    for j in range(1, 4):
        assert np.array_equal(fam.psi(j), ref.psi(j))
    assert fam.passed


def test_family_checks_on_grushin(grushin):
    space, Q, o = grushin
    fam = build_accumulating_family(space, Q, Ball(o, 0.15))
    assert fam.passed, fam.checks
    assert set(fam.checks) == {"supp_psi1_in_B", "plateau_contains_nuR_ball", "nested_supports", "range_01", "lipschitz"}
    assert fam.J >= 3


def test_family_boundary_constraint(grushin):
    space, Q, o = grushin
    limit = boundary_distance(space, o) / 6
    with pytest.raises(ValueError, match="too close to the domain boundary"):
        build_accumulating_family(space, Q, Ball(o, limit * 1.01))
    off_center = node_at(space, (1.0, 0.0))
    with pytest.raises(ValueError, match="too close"):
        build_accumulating_family(space, Q, Ball(off_center, 0.1))


def test_fit_KN_identity_bound_and_scale_uniformity():
    plane = build_grid([(-3.1, 3.1), (-3.1, 3.1)], 1241, WeightFamily("lebesgue", dim=2))
    Q = MatrixField.identity()
    o = node_at(plane, (0.0, 0.0))
    values = []
    for R in (0.1, 0.2, 0.3, 0.4, 0.5):
        fam = build_accumulating_family(plane, Q, Ball(o, R), J=2)
        values.append(fit_KN(plane, Q, fam, 8, 2))
    assert max(values) <= 4.0
    assert max(values) / min(values) - 1 <= 0.10


def test_fit_KN_monotone_in_N(grushin):
    space, Q, o = grushin
    fam = build_accumulating_family(space, Q, Ball(o, 0.15))
    Ks = [fit_KN(space, Q, fam, 8, N) for N in (1.5, 2.0, 3.0, 5.0)]
    assert all(math.isfinite(k) and k > 0 for k in Ks)
    assert all(b <= a for a, b in zip(Ks, Ks[1:]))
    with pytest.raises(ValueError):
        fit_KN(space, Q, fam, 0.5, 2)


def test_certificate_identity(octile):
    space, o = octile
    cert = subelliptic_chain_certify(space, MatrixField.identity(), Ball(o, 0.12), P228)
    assert cert.passed
    assert cert.beta == 1.5
    assert cert.limit_bound >= cert.actual_doubling
    assert cert.actual_doubling == pytest.approx(4.0, rel=0.1)


def test_certificate_grushin(grushin):
    space, Q, o = grushin
    cert = subelliptic_chain_certify(space, Q, Ball(o, 0.15), P228)
    assert cert.passed
    assert math.log2(cert.actual_doubling) <= cert.log2_limit_bound
    assert cert.log_lhs <= cert.log_rhs
    assert cert.c_hat_all >= cert.c_hat
    assert max(r["c_j"] for r in cert.rows) == cert.c_hat


def test_certificate_rejects_divergent_params():
    with pytest.raises(DivergentIteration):
        SubellipticParams(2, 2, 4)
