import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobdub import Ball, DiscreteSpace, WeightFamily, build_grid
from sobdub.cutoffs import build_family, default_J, psi, psi_values, radius, verify_cutoff_properties


def test_radius_examples():
    assert radius(1, 1.0) == 0.75
    assert radius(1, 1.0) - radius(2, 1.0) == 0.125
    assert radius(60, 3.0) == pytest.approx(1.5, rel=1e-15)
    for j in range(1, 30):
        assert radius(j, 2.0) - radius(j + 1, 2.0) == pytest.approx(2.0 ** (-j - 2) * 2.0, rel=1e-12)
        assert radius(j + 1, 2.0) < radius(j, 2.0)
    with pytest.raises(ValueError):
        radius(0, 1.0)


def test_psi_profile():
    R, j = 1.0, 2
    rj, rj1 = radius(j, R), radius(j + 1, R)
    d = np.array([0.0, rj1, 0.5 * (rj + rj1), rj, rj + 0.1])
    assert psi_values(j, R, d).tolist() == [1.0, 1.0, 0.5, 0.0, 0.0]


def test_psi_at_points():
    space = DiscreteSpace(np.ones(5), [0.0, 0.625, 0.6875, 0.75, 1.0])
    ball = Ball(0, 1.0)
    assert [psi(1, ball, k, space) for k in range(5)] == [1.0, 1.0, 0.5, 0.0, 0.0]
    assert psi(1, Ball(0.0, 1.0), 0.6875, space) == 0.5


def test_default_J_examples():
    assert default_J(Ball(0.0, 1.0), DiscreteSpace([1.0], [0.0], mesh=1 / 1024)) == 8
    assert default_J(Ball(0.0, 1.0), DiscreteSpace([1.0], [0.0], mesh=1 / 8)) == 1
    with pytest.raises(ValueError, match="radius below resolution"):
        default_J(Ball(0.0, 1.0), DiscreteSpace([1.0], [0.0], mesh=0.25))
    assert default_J(Ball(0.0, 1.0), DiscreteSpace([1.0], [0.0], mesh=1e-30)) == 40


def test_family_structure(leb1d):
    fam = build_family(leb1d, Ball(0.0, 1.0))
    d = np.abs(leb1d.coords[:, 0])
    assert fam.J_max == default_J(Ball(0.0, 1.0), leb1d)
    half = set(np.flatnonzero(d <= 0.5))
    inside_B = set(np.flatnonzero(d < 1.0))
    for j in range(1, fam.J_max + 1):
        Bj = set(fam.B(j))
        assert half <= Bj <= inside_B
        nxt = fam.psi(j + 1) if j < fam.J_max else None
        if nxt is not None:
            assert np.all(fam.psi(j)[nxt > 0] == 1.0)


def test_lebesgue_1d_first_cutoff_passes(leb1d):
    fam = build_family(leb1d, Ball(0.0, 1.0), J_max=1)
    report = verify_cutoff_properties(leb1d, fam)
    assert report.passed, report.failures
    assert report.rows[0]["slope"] == 8.0
    assert report.rows[0]["max_pairwise_quotient"] == pytest.approx(8.0, rel=1e-9)


def test_all_resolvable_cutoffs_pass_1d_and_2d(leb1d, leb2d):
    for space, center in ((leb1d, 0.3), (leb2d, (0.1, -0.2))):
        fam = build_family(space, Ball(center, 1.0))
        report = verify_cutoff_properties(space, fam, p=2)
        assert report.passed, report.failures
        assert report.checked == list(range(1, fam.J_max + 1))


def test_atomic_space_is_vacuous(atom):
    fam = build_family(atom, Ball(0, 1.0))
    report = verify_cutoff_properties(atom, fam)
    assert report.passed


def test_below_resolution_is_flagged(leb1d):
    J = default_J(Ball(0.0, 1.0), leb1d)
    fam = build_family(leb1d, Ball(0.0, 1.0), J_max=J + 3)
    report = verify_cutoff_properties(leb1d, fam)
    assert report.below_resolution == [J + 1, J + 2, J + 3]
    assert report.checked == list(range(1, J + 1))


def test_failure_names_j_and_point(leb1d):
    fam = build_family(leb1d, Ball(0.0, 1.0), J_max=2)
    bad = fam.functions[1].copy()
    bad[np.argmin(np.abs(leb1d.coords[:, 0]))] = 0.5
    broken = type(fam)(fam.ball, fam.radii, (fam.functions[0], bad), fam.nested_sets, fam.J_max, fam.resolvable)
    report = verify_cutoff_properties(leb1d, broken)
    assert not report.passed
    assert {f["j"] for f in report.failures} == {2}
    assert "plateau" in {f["check"] for f in report.failures}


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    n=st.integers(20, 120),
    R=st.floats(0.3, 2.0),
)
def test_pairwise_lipschitz_on_random_clouds(seed, n, R):
    """Exact bound 2**(j+2)/R over all pairs, for any metric point cloud."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2, 2, size=(n, 2))
    space = DiscreteSpace(rng.uniform(0.1, 2.0, n), pts, mesh=1.0)
    ball = Ball(0, R)
    fam = build_family(space, ball, J_max=4)
    d = space.center_distances(0)
    for j in range(1, 5):
        u = fam.psi(j)
        L = 2.0 ** (j + 2) / R
        diff = np.abs(u[:, None] - u[None, :])
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        off = dist > 0
        assert np.all(diff[off] <= L * dist[off] * (1 + 1e-12))
        assert np.all(u[d >= radius(j, R)] == 0.0)
        assert np.all(u[d <= radius(j + 1, R)] == 1.0)


def test_graph_space_cutoffs():
    # path graph: cutoffs use shortest-path distances
    n = 201
    idx = np.arange(n - 1)
    space = DiscreteSpace(np.ones(n), edges=(idx, idx + 1, np.full(n - 1, 0.01)), mesh=0.005)
    fam = build_family(space, Ball(100, 0.5))
    assert verify_cutoff_properties(space, fam).passed
