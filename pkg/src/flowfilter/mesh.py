"""Structured triangulations of the rectangular channel (0, L) x (0, H).

Nodes are numbered row by row, ``index = j * (nx + 1) + i`` for grid column
``i`` and row ``j``.  Every cell is cut along its lower-left to upper-right
diagonal so that all triangles are counterclockwise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class BoundaryTag(enum.IntEnum):
    INTERIOR = 0
    INFLOW = 1
    OUTFLOW = 2
    WALL = 3
    WALL_CORNER = 4


_TAG_CODES = {
    BoundaryTag.INTERIOR: "I",
    BoundaryTag.INFLOW: "IN",
    BoundaryTag.OUTFLOW: "OUT",
    BoundaryTag.WALL: "W",
    BoundaryTag.WALL_CORNER: "WC",
}
_CODE_TAGS = {v: k for k, v in _TAG_CODES.items()}


class MeshFormatError(ValueError):
    pass


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with boundary tags.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    triangles : (n_triangles, 3) int array, counterclockwise vertex triples
    boundary_edges : (n_edges, 2) int array
    edge_tags : (n_edges,) int array of :class:`BoundaryTag` values; an edge
        carries the tag of the boundary side it lies on (INFLOW, OUTFLOW
        or WALL)
    node_tags : (n_nodes,) int array of :class:`BoundaryTag` values
    length, height : channel dimensions
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    node_tags: np.ndarray
    length: float
    height: float

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "edge_tags", "node_tags"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges_with_tag(self, *tags: BoundaryTag) -> np.ndarray:
        return self.boundary_edges[np.isin(self.edge_tags, [int(t) for t in tags])]


def _tag_nodes(nodes, length, height, tol):
    x, y = nodes[:, 0], nodes[:, 1]
    on_in = np.abs(x) <= tol
    on_out = np.abs(x - length) <= tol
    on_wall = (np.abs(y) <= tol) | (np.abs(y - height) <= tol)
    tags = np.full(len(nodes), int(BoundaryTag.INTERIOR), dtype=np.int64)
    tags[on_wall] = BoundaryTag.WALL
    tags[on_in] = BoundaryTag.INFLOW
    tags[on_out] = BoundaryTag.OUTFLOW
    tags[(on_in | on_out) & on_wall] = BoundaryTag.WALL_CORNER
    return tags


def generate_channel_mesh(length: float, height: float, nx: int, ny: int) -> Mesh:
    """Uniform ``nx`` by ``ny`` grid on (0, length) x (0, height), two triangles per cell."""
    if not (np.isfinite(length) and length > 0):
        raise ValueError(f"length must be positive, got {length!r}")
    if not (np.isfinite(height) and height > 0):
        raise ValueError(f"height must be positive, got {height!r}")
    for name, n in (("nx", nx), ("ny", ny)):
        if int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n!r}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # rows are j (y), columns are i (x)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    n00 = idx[:-1, :-1].ravel()
    n10 = idx[:-1, 1:].ravel()
    n01 = idx[1:, :-1].ravel()
    n11 = idx[1:, 1:].ravel()
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    top = np.column_stack([idx[-1, :-1], idx[-1, 1:]])
    left = np.column_stack([idx[:-1, 0], idx[1:, 0]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    edges = np.vstack([left, right, bottom, top])
    edge_tags = np.concatenate([
        np.full(ny, int(BoundaryTag.INFLOW)),
        np.full(ny, int(BoundaryTag.OUTFLOW)),
        np.full(2 * nx, int(BoundaryTag.WALL)),
    ])

    tol = 1e-12 * max(length, height)
    node_tags = _tag_nodes(nodes, length, height, tol)
    return Mesh(nodes, triangles, edges, edge_tags, node_tags, float(length), float(height))


def boundary_nodes(mesh: Mesh, tag: BoundaryTag) -> np.ndarray:
    """Indices of nodes carrying ``tag``, ordered along the boundary part.

    Inflow and outflow nodes are sorted by y, wall nodes by x (ties by y).
    Corner and interior nodes are sorted lexicographically by (x, y).
    """
    tag = BoundaryTag(tag)
    ids = np.flatnonzero(mesh.node_tags == tag)
    x, y = mesh.nodes[ids, 0], mesh.nodes[ids, 1]
    if tag in (BoundaryTag.INFLOW, BoundaryTag.OUTFLOW):
        order = np.lexsort((x, y))
    else:
        order = np.lexsort((y, x))
    return ids[order]


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in the line-oriented ``mesh v1`` text format."""
    lines = ["mesh v1", f"{mesh.n_nodes} {mesh.n_triangles}"]
    for (x, y), t in zip(mesh.nodes, mesh.node_tags):
        lines.append(f"{x:.17g} {y:.17g} {_TAG_CODES[BoundaryTag(t)]}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Parse a ``mesh v1`` file; boundary edges are rebuilt from node tags.

    The channel extent is taken as the bounding box of the nodes.
    """
    text = Path(path).read_text().split("\n")
    if not text or text[0].strip() != "mesh v1":
        raise MeshFormatError(f"{path}: missing 'mesh v1' header")
    try:
        n_nodes, n_tri = (int(v) for v in text[1].split())
        node_lines = text[2:2 + n_nodes]
        tri_lines = text[2 + n_nodes:2 + n_nodes + n_tri]
        nodes = np.array([[float(v) for v in ln.split()[:2]] for ln in node_lines])
        tags = np.array([_CODE_TAGS[ln.split()[2]] for ln in node_lines], dtype=np.int64)
        triangles = np.array([[int(v) for v in ln.split()] for ln in tri_lines], dtype=np.int64)
    except (ValueError, KeyError, IndexError) as exc:
        raise MeshFormatError(f"{path}: malformed mesh file ({exc})") from exc
    if nodes.shape != (n_nodes, 2) or triangles.shape != (n_tri, 3):
        raise MeshFormatError(f"{path}: truncated mesh file")
    length, height = float(nodes[:, 0].max()), float(nodes[:, 1].max())
    edges, edge_tags = _boundary_edges_from_triangles(nodes, triangles, length, height)
    return Mesh(nodes, triangles, edges, edge_tags, tags, length, height)


def _boundary_edges_from_triangles(nodes, triangles, length, height):
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = e[counts[inv.ravel()] == 1]
    mid = nodes[bnd].mean(axis=1)
    tol = 1e-9 * max(length, height)
    tags = np.full(len(bnd), int(BoundaryTag.WALL), dtype=np.int64)
    tags[np.abs(mid[:, 0]) <= tol] = BoundaryTag.INFLOW
    tags[np.abs(mid[:, 0] - length) <= tol] = BoundaryTag.OUTFLOW
    order = np.lexsort((mid[:, 1], mid[:, 0], tags))
    return bnd[order], tags[order]
