from math import factorial

import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sym
from hypothesis import given, settings, strategies as st

from flowfilter.fem import (
    assemble_boundary,
    assemble_convection,
    assemble_divergence,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    interpolate_boundary,
    n_scalar_dofs,
    n_velocity_dofs,
    read_pressure_csv,
    read_velocity_csv,
    write_pressure_csv,
    write_velocity_csv,
)
from flowfilter.mesh import BoundaryTag, Mesh, generate_channel_mesh
from flowfilter.solver import factorize, saddle_matrix
from flowfilter.testbed import PoiseuilleCase


def unit_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.full(3, int(BoundaryTag.WALL))
    return Mesh(nodes, np.array([[0, 1, 2]]), edges, tags, np.full(3, int(BoundaryTag.WALL_CORNER)), 1.0, 1.0)


def bary_integral(a, b, c, area):
    return 2 * area * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


def test_unit_triangle_stiffness():
    m = unit_triangle()
    K = assemble_stiffness(m).toarray()
    np.testing.assert_allclose(K[:3, :3], 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-14)
    np.testing.assert_allclose(K[4:7, 4:7], K[:3, :3], atol=1e-14)
    assert np.abs(K[:4, 4:]).max() == 0


def test_unit_triangle_mass():
    m = unit_triangle()
    M, Mp = assemble_mass(m)
    A = 0.5
    np.testing.assert_allclose(Mp.toarray(), A / 12 * (np.ones((3, 3)) + np.eye(3)), rtol=1e-14)
    M = M.toarray()
    assert M[3, 3] == pytest.approx(729 * bary_integral(2, 2, 2, A), rel=1e-14)
    # integral of the bubble and of bubble times a hat function
    assert M[3, :3].sum() == pytest.approx(27 * bary_integral(1, 1, 1, A), rel=1e-14)
    assert M[3, 0] == pytest.approx(27 * bary_integral(2, 1, 1, A), rel=1e-14)


def test_stiffness_examples(mesh_10x4):
    K = assemble_stiffness(mesh_10x4)
    one = interpolate(mesh_10x4, lambda x, y: (1 + 0 * x, 1 + 0 * x))
    assert np.abs(K @ one).max() < 1e-12
    v = interpolate(mesh_10x4, lambda x, y: (x, 0 * x))
    assert v @ K @ v == pytest.approx(5.0, rel=1e-12)


def test_pressure_mass_integral(mesh_10x4):
    _, Mp = assemble_mass(mesh_10x4)
    one = np.ones(mesh_10x4.n_nodes)
    assert one @ Mp @ one == pytest.approx(5.0, rel=1e-13)


@pytest.mark.parametrize("fixture", ["mesh_4x2", "mesh_10x4"])
def test_matrix_invariants(fixture, request):
    m = request.getfixturevalue(fixture)
    K = assemble_stiffness(m).toarray()
    M, Mp = (a.toarray() for a in assemble_mass(m))
    assert np.abs(K - K.T).max() < 1e-13
    ev = np.linalg.eigvalsh(K)
    assert ev[0] > -1e-12 and ev[1] < 1e-12 and ev[2] > 1e-6  # kernel: one constant per component
    assert np.abs(M - M.T).max() < 1e-15 and np.linalg.eigvalsh(M)[0] > 0
    assert np.linalg.eigvalsh(Mp)[0] > 0
    w = interpolate(m, PoiseuilleCase().velocity)
    C = assemble_convection(m, w).toarray()
    assert np.abs(C + C.T).max() <= 1e-12 * np.abs(C).max()
    B = assemble_divergence(m)
    const = interpolate(m, lambda x, y: (0.3 + 0 * x, -1.7 + 0 * x))
    assert np.abs(B @ const).max() < 1e-12
    bnd = assemble_boundary(m)
    for G in (bnd.G, bnd.H):
        G = G.toarray()
        assert np.abs(G - G.T).max() < 1e-15
        if G.size:
            assert np.linalg.eigvalsh(G)[0] > 0
    factorize(saddle_matrix(sp.csr_matrix(M), B), "mass saddle matrix")


def test_convection_zero_field(mesh_4x2):
    C = assemble_convection(mesh_4x2, np.zeros(n_velocity_dofs(mesh_4x2)))
    assert C.count_nonzero() == 0


def test_convection_skew_random(mesh_4x2):
    rng = np.random.default_rng(3)
    n = n_velocity_dofs(mesh_4x2)
    C = assemble_convection(mesh_4x2, rng.standard_normal(n))
    scale = np.abs(C).max()
    for _ in range(100):
        v = rng.standard_normal(n)
        assert abs(v @ C @ v) <= 1e-12 * scale * (v @ v)


def test_convection_wrong_shape(mesh_4x2):
    with pytest.raises(ValueError):
        assemble_convection(mesh_4x2, np.zeros(3))


def _symbolic_basis(p):
    """Mini basis on one triangle as sympy expressions in x, y."""
    x, y = sym.symbols("x y")
    (x0, y0), (x1, y1), (x2, y2) = [[sym.Rational(str(v)) for v in row] for row in p]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    l1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det
    l2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det
    l0 = 1 - l1 - l2
    return x, y, [l0, l1, l2, 27 * l0 * l1 * l2], (x0, y0, x1, y1, x2, y2)


def _integrate_triangle(expr, x, y, verts):
    x0, y0, x1, y1, x2, y2 = verts
    s, t = sym.symbols("s t")
    sub = {x: x0 + (x1 - x0) * s + (x2 - x0) * t, y: y0 + (y1 - y0) * s + (y2 - y0) * t}
    jac = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    return sym.integrate(sym.integrate(sym.expand(expr.subs(sub)), (t, 0, 1 - s)), (s, 0, 1)) * jac


def test_convection_entries_exact():
    """Full scalar block of C against exact symbolic integration on two triangles."""
    m = generate_channel_mesh(1.0, 1.0, 1, 1)
    rng = np.random.default_rng(0)
    ns = n_scalar_dofs(m)
    w = interpolate(m, PoiseuilleCase().velocity)
    w[m.n_nodes:ns] = rng.uniform(-1, 1, m.n_triangles)  # nonzero bubbles too
    w[ns + m.n_nodes:] = rng.uniform(-1, 1, m.n_triangles)
    C = assemble_convection(m, w).toarray()[:ns, :ns]
    ref = np.zeros((ns, ns))
    for t, tri in enumerate(m.triangles):
        x, y, phi, verts = _symbolic_basis(m.nodes[tri])
        dofs = list(tri) + [m.n_nodes + t]
        wx = sum(sym.Rational(str(w[d])) * f for d, f in zip(dofs, phi))
        wy = sum(sym.Rational(str(w[ns + d])) * f for d, f in zip(dofs, phi))
        for a, fa in enumerate(phi):
            for b, fb in enumerate(phi):
                adv_b = wx * sym.diff(fb, x) + wy * sym.diff(fb, y)
                adv_a = wx * sym.diff(fa, x) + wy * sym.diff(fa, y)
                val = _integrate_triangle(sym.Rational(1, 2) * (adv_b * fa - fb * adv_a), x, y, verts)
                ref[dofs[a], dofs[b]] += float(val)
    np.testing.assert_allclose(C, ref, atol=1e-13 * np.abs(ref).max())


def test_divergence_examples():
    m = generate_channel_mesh(5.0, 1.0, 10, 4)
    B = assemble_divergence(m)
    v = interpolate(m, lambda x, y: (x, -y))
    assert np.abs(B @ v).max() < 1e-12
    m2 = generate_channel_mesh(5.0, 1.0, 2, 2)
    B2 = assemble_divergence(m2)
    v2 = interpolate(m2, lambda x, y: (x, 0 * x))
    assert np.ones(m2.n_nodes) @ (B2 @ v2) == pytest.approx(-5.0, rel=1e-13)


def test_inflow_gramian():
    m = generate_channel_mesh(5.0, 1.0, 10, 80)
    bnd = assemble_boundary(m)
    g = interpolate_boundary(m, PoiseuilleCase().velocity, BoundaryTag.INFLOW)
    assert g @ bnd.G @ g == pytest.approx(110.0 / 3.0, rel=1e-2)
    assert not np.any(bnd.E @ np.zeros(bnd.E.shape[1]))


def test_outflow_gramian_constant(mesh_10x4):
    bnd = assemble_boundary(mesh_10x4)
    n_out = bnd.H.shape[0] // 2
    h = np.concatenate([np.ones(n_out), np.zeros(n_out)])
    assert h @ bnd.H @ h == pytest.approx(1.0, rel=1e-13)


def test_penalty_mass_covers_dirichlet_boundary(mesh_10x4):
    # total Dirichlet boundary length: inflow 1 plus two walls of length 5
    R = assemble_boundary(mesh_10x4).R
    ns = n_scalar_dofs(mesh_10x4)
    one = np.zeros(2 * ns)
    one[:mesh_10x4.n_nodes] = 1.0
    assert one @ R @ one == pytest.approx(11.0, rel=1e-13)


def test_interpolate(mesh_10x4):
    m = mesh_10x4
    ns = n_scalar_dofs(m)
    assert not np.any(interpolate(m, lambda x, y: (0 * x, 0 * x)))
    u = interpolate(m, PoiseuilleCase().velocity)
    mid = np.flatnonzero(np.isclose(m.nodes[:, 1], 0.5))
    np.testing.assert_allclose(u[mid], 2.5, rtol=1e-14)
    one = interpolate(m, lambda x, y: (1 + 0 * x, 1 + 0 * x))
    assert np.all(one[:m.n_nodes] == 1) and np.all(one[ns:ns + m.n_nodes] == 1)
    assert not np.any(one[m.n_nodes:ns]) and not np.any(one[ns + m.n_nodes:])


def test_field_csv_roundtrip(tmp_path, mesh_10x4):
    rng = np.random.default_rng(1)
    u = interpolate(mesh_10x4, lambda x, y: (rng.standard_normal(x.shape), rng.standard_normal(x.shape)))
    write_velocity_csv(mesh_10x4, u, tmp_path / "u.csv")
    np.testing.assert_array_equal(read_velocity_csv(mesh_10x4, tmp_path / "u.csv"), u)
    p = rng.standard_normal(mesh_10x4.n_nodes)
    write_pressure_csv(mesh_10x4, p, tmp_path / "p.csv")
    np.testing.assert_array_equal(read_pressure_csv(mesh_10x4, tmp_path / "p.csv"), p)
    (tmp_path / "bad.csv").write_text("node_id,ux,uy\n0,1,2\n")
    with pytest.raises(ValueError):
        read_velocity_csv(mesh_10x4, tmp_path / "bad.csv")


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 6), ny=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_assembly_properties(nx, ny, seed):
    m = generate_channel_mesh(5.0, 1.0, nx, ny)
    rng = np.random.default_rng(seed)
    n = n_velocity_dofs(m)
    v = rng.standard_normal(n)
    C = assemble_convection(m, rng.standard_normal(n))
    assert abs(v @ C @ v) <= 1e-12 * max(np.abs(C).max(), 1e-300) * (v @ v) + 1e-300
    assert v @ assemble_stiffness(m) @ v >= -1e-12 * (v @ v)
    B = assemble_divergence(m)
    c = interpolate(m, lambda x, y: (rng.uniform(-3, 3) + 0 * x, rng.uniform(-3, 3) + 0 * x))
    assert np.abs(B @ c).max() < 1e-11
    _, Mp = assemble_mass(m)
    assert Mp.sum() == pytest.approx(5.0, rel=1e-12)
