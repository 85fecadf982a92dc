import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowfilter.mesh import (
    BoundaryTag,
    MeshFormatError,
    boundary_nodes,
    generate_channel_mesh,
    read_mesh,
    write_mesh,
)


def node_at(mesh, x, y):
    d = np.hypot(mesh.nodes[:, 0] - x, mesh.nodes[:, 1] - y)
    i = int(np.argmin(d))
    assert d[i] < 1e-12
    return i


def test_fine_mesh_counts():
    mesh = generate_channel_mesh(5, 1, 112, 80)
    assert (mesh.n_nodes, mesh.n_triangles) == (9153, 17920)


def test_smallest_grid():
    mesh = generate_channel_mesh(5, 1, 1, 1)
    assert (mesh.n_nodes, mesh.n_triangles) == (4, 2)
    assert mesh.signed_areas().sum() == pytest.approx(5.0, rel=1e-12)
    assert len(boundary_nodes(mesh, BoundaryTag.INFLOW)) == 0


def test_tags_10x4(mesh_10x4):
    m = mesh_10x4
    assert (m.n_nodes, m.n_triangles) == (55, 80)
    assert m.node_tags[node_at(m, 0, 0.25)] == BoundaryTag.INFLOW
    assert m.node_tags[node_at(m, 2.5, 0)] == BoundaryTag.WALL
    assert m.node_tags[node_at(m, 0, 0)] == BoundaryTag.WALL_CORNER
    inflow = boundary_nodes(m, BoundaryTag.INFLOW)
    np.testing.assert_allclose(m.nodes[inflow, 1], [0.25, 0.5, 0.75])
    wall = boundary_nodes(m, BoundaryTag.WALL)
    assert len(wall) == 18
    assert np.all(np.diff(m.nodes[wall, 0]) >= 0)


@pytest.mark.parametrize("length,height,nx,ny", [(0, 1, 2, 2), (5, -1, 2, 2), (5, 1, 0, 2), (5, 1, 2, 0)])
def test_invalid_arguments(length, height, nx, ny):
    with pytest.raises(ValueError):
        generate_channel_mesh(length, height, nx, ny)


@settings(max_examples=30, deadline=None)
@given(length=st.floats(0.1, 20), height=st.floats(0.1, 5), nx=st.integers(1, 12), ny=st.integers(1, 12))
def test_mesh_invariants(length, height, nx, ny):
    m = generate_channel_mesh(length, height, nx, ny)
    areas = m.signed_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(length * height, rel=1e-12)
    # each boundary edge lies in exactly one triangle
    tri_edges = np.sort(np.vstack([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1)
    keys, counts = np.unique(tri_edges, axis=0, return_counts=True)
    lookup = {tuple(k): c for k, c in zip(keys, counts)}
    for e in np.sort(m.boundary_edges, axis=1):
        assert lookup[tuple(e)] == 1
    assert len(m.boundary_edges) == 2 * (nx + ny)
    x, y = m.nodes[:, 0], m.nodes[:, 1]
    tags = m.node_tags
    assert np.all(x[tags == BoundaryTag.INFLOW] == 0)
    assert np.allclose(x[tags == BoundaryTag.OUTFLOW], length)
    wall = tags == BoundaryTag.WALL
    assert np.all((y[wall] == 0) | np.isclose(y[wall], height))
    assert np.sum(tags == BoundaryTag.WALL_CORNER) == 4


def test_roundtrip(tmp_path, mesh_10x4):
    path = tmp_path / "m.txt"
    write_mesh(mesh_10x4, path)
    again = read_mesh(path)
    np.testing.assert_array_equal(again.nodes, mesh_10x4.nodes)
    np.testing.assert_array_equal(again.triangles, mesh_10x4.triangles)
    np.testing.assert_array_equal(again.node_tags, mesh_10x4.node_tags)
    assert sorted(map(tuple, np.sort(again.boundary_edges, axis=1))) == \
        sorted(map(tuple, np.sort(mesh_10x4.boundary_edges, axis=1)))
    write_mesh(again, tmp_path / "m2.txt")
    assert (tmp_path / "m2.txt").read_bytes() == path.read_bytes()
    assert path.read_text().splitlines()[:2] == ["mesh v1", "55 80"]


def test_bad_file(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("mesh v1\n3 1\n0 0 WC\n1 0 WC\n")
    with pytest.raises(MeshFormatError):
        read_mesh(p)
    p.write_text("not a mesh\n")
    with pytest.raises(MeshFormatError):
        read_mesh(p)


def test_immutable(mesh_4x2):
    with pytest.raises(ValueError):
        mesh_4x2.nodes[0, 0] = 1.0
