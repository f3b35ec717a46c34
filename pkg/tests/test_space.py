"""Tensor Lagrange bases, quadrature exactness, and DoF bookkeeping."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polymg import mesh as msh
from polymg import rtree as rt
from polymg import space as spc


def barycentric_oracle(nodes, j, x):
    """Independent barycentric Lagrange evaluation (second form)."""
    nodes = np.asarray(nodes, dtype=float)
    w = np.array([1.0 / np.prod([nodes[k] - nodes[i] for i in range(len(nodes))
                                 if i != k]) for k in range(len(nodes))])
    if any(x == n for n in nodes):
        return 1.0 if x == nodes[j] else 0.0
    terms = w / (x - nodes)
    return (w[j] / (x - nodes[j])) / terms.sum()


def test_lagrange_delta_property():
    m = msh.generate_structured(2, [0, 0], [1, 1], (1, 1))
    s = spc.space_from_mesh(m, 1)
    ref = s.reference_nodes()
    for i in range(4):
        for j in range(4):
            expected = 1.0 if i == j else 0.0
            assert s.shape_value(i, ref[j]) == pytest.approx(expected, abs=1e-14)


def test_partition_of_unity():
    m = msh.generate_structured(2, [0, 0], [1, 1], (1, 1))
    rng = np.random.default_rng(0)
    for p in (1, 2, 3, 4):
        s = spc.space_from_mesh(m, p)
        pts = rng.random((10, 2))
        totals = s.shape_values(pts).sum(axis=1)
        np.testing.assert_allclose(totals, 1.0, atol=1e-13)


def test_p2_midpoint_basis_against_barycentric_oracle():
    basis = spc.Lagrange1D(spc.gauss_lobatto_points(3))
    got = basis.values(np.array([0.25]))[0, 1]
    want = barycentric_oracle(basis.nodes, 1, 0.25)
    assert got == pytest.approx(want, rel=1e-14)


def test_derivatives_match_finite_differences():
    for p in (1, 2, 3, 4):
        basis = spc.Lagrange1D(spc.gauss_lobatto_points(p + 1))
        x = np.array([0.3172, 0.5, 0.0, 1.0])  # includes node hits
        d = basis.derivatives(x)
        eps = 1e-6
        fd = (basis.values(x + eps) - basis.values(x - eps)) / (2 * eps)
        np.testing.assert_allclose(d, fd, atol=2e-6 * np.abs(d).max())


def test_gauss_integrates_x2p_exactly():
    for p in range(1, 6):
        x, w = spc.gauss_points(p + 1)
        got = float(w @ x ** (2 * p))
        assert got == pytest.approx(1.0 / (2 * p + 1), abs=1e-14)


def test_quadrature_weights_sum_to_volume():
    for dim in (2, 3):
        for n in (2, 3, 5):
            _, w = spc.tensor_quadrature(dim, n)
            assert w.sum() == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("p,expected", [(1, 65536), (2, 147456), (3, 262144),
                                        (4, 409600)])
def test_total_dofs_2d_quadrature_mesh(p, expected):
    m = msh.generate_structured(2, [0, 0], [1, 1], (128, 128))
    s = spc.space_from_mesh(m, p)
    assert s.total_dofs == expected


def test_total_dofs_single_hex_p1():
    m = msh.generate_structured(3, [0, 0, 0], [1, 1, 1], (1, 1, 1))
    assert spc.space_from_mesh(m, 1).total_dofs == 8


def test_total_dofs_large_hex_count():
    # 407,904 hexes at p=1 (dof arithmetic only: boxes are placeholders)
    n = 407904
    s = spc.DGSpace(3, 1, np.zeros((n, 3)), np.ones((n, 3)))
    assert s.total_dofs == 3263232


def test_nodal_interpolation_exact_for_monomials():
    rng = np.random.default_rng(1)
    m = msh.generate_structured(2, [0, 0], [1, 1], (1, 1))
    for p in (1, 2, 3, 4):
        s = spc.space_from_mesh(m, p)
        ref = s.reference_nodes()
        for (ax, ay) in [(p, 0), (0, p), (p, p), (1, min(1, p))]:
            f = lambda x: x[:, 0] ** ax * x[:, 1] ** ay
            coeffs = f(ref)
            pts = rng.random((20, 2))
            got = s.shape_values(pts) @ coeffs
            np.testing.assert_allclose(got, f(pts), atol=1e-12)


def _tiny_hierarchy(sub=(4, 4), degree=2):
    m = msh.generate_structured(2, [0, 0], [1, 1], sub)
    hier = rt.build_hierarchy(m, num_levels=2)
    coarse = spc.space_from_agglomerates(hier, 1, degree)
    return m, hier, coarse


def test_agglomerate_eval_constant():
    m, hier, coarse = _tiny_hierarchy()
    member = int(hier.levels[0].members[0][0])
    vals = spc.agglomerate_local_to_fine_eval(hier, coarse, 0, member, [0.3, 0.7])
    assert vals.sum() == pytest.approx(1.0, abs=1e-13)


def test_agglomerate_eval_identity_geometry():
    # agglomerate bounding box identical to a single fine element: coarse
    # values equal the fine shape values
    m = msh.generate_structured(2, [0, 0], [1, 1], (2, 2))
    s = spc.space_from_mesh(m, 2)
    coarse = spc.DGSpace(2, 2, m.element_lo, m.element_hi, level=1)

    class FakeLevel:
        members = [np.array([k]) for k in range(m.n_elements)]
        boxes_lo = m.element_lo
        boxes_hi = m.element_hi
        parent = None

    class FakeHier:
        mesh = m
        dim = 2
        levels = [FakeLevel()]

    point = np.array([0.37, 0.81])
    vals = spc.agglomerate_local_to_fine_eval(FakeHier(), coarse, 1, 1, point)
    np.testing.assert_allclose(vals, s.shape_values(point[None])[0], atol=1e-13)


def test_agglomerate_eval_linear_exact():
    rng = np.random.default_rng(2)
    m, hier, coarse = _tiny_hierarchy(degree=2)
    f = lambda pts: pts[:, 0]
    for agg in range(3):
        nodes = coarse.support_points(agg)
        coeffs = f(nodes)
        member = int(hier.levels[0].members[agg][0])
        for ref in rng.random((10, 2)):
            vals = spc.agglomerate_local_to_fine_eval(hier, coarse, agg, member, ref)
            lo = m.element_lo[member]
            hi = m.element_hi[member]
            phys = lo + ref * (hi - lo)
            assert vals @ coeffs == pytest.approx(phys[0], abs=1e-13)


def test_agglomerate_eval_rejects_non_member():
    m, hier, coarse = _tiny_hierarchy()
    members0 = set(hier.levels[0].members[0])
    outsider = next(k for k in range(m.n_elements) if k not in members0)
    with pytest.raises(spc.SpaceError):
        spc.agglomerate_local_to_fine_eval(hier, coarse, 0, outsider, [0.5, 0.5])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_shape_values_bounded_partition(p, x, y):
    m = msh.generate_structured(2, [0, 0], [1, 1], (1, 1))
    s = spc.space_from_mesh(m, p)
    vals = s.shape_values(np.array([[x, y]]))[0]
    assert vals.sum() == pytest.approx(1.0, abs=1e-12)


def test_invalid_degree_and_index():
    m = msh.generate_structured(2, [0, 0], [1, 1], (1, 1))
    with pytest.raises(spc.SpaceError):
        spc.space_from_mesh(m, 0)
    s = spc.space_from_mesh(m, 1)
    with pytest.raises(spc.SpaceError):
        s.shape_value(4, [0.5, 0.5])
