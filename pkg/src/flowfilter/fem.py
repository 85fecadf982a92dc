"""Mini element spaces and sparse assembly.

Velocity: per component, continuous P1 enriched by the cubic bubble
``27 l1 l2 l3`` on every triangle.  The coefficient vector of a velocity field
has length ``2 * (n_nodes + n_triangles)``: the x-component block (nodal
values, then one bubble per triangle) followed by the y-component block.
Pressure: continuous P1, one value per node.

Boundary fields (inflow data g, outflow data h) store two components per
boundary node of their part, x-block first, nodes ordered as returned by
:func:`flowfilter.mesh.boundary_nodes`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh, boundary_nodes
from .quadrature import interval_rule, triangle_rule

QUAD_POINTS, QUAD_WEIGHTS = triangle_rule(5)
EDGE_POINTS, EDGE_WEIGHTS = interval_rule(3)


def n_scalar_dofs(mesh: Mesh) -> int:
    return mesh.n_nodes + mesh.n_triangles


def n_velocity_dofs(mesh: Mesh) -> int:
    return 2 * n_scalar_dofs(mesh)


def _reference_basis(points):
    """Values (4, nq) and barycentric derivatives (4, nq, 3) of l1, l2, l3, bubble."""
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1.0 - x - y, x, y])
    phi = np.vstack([lam, 27.0 * lam[0] * lam[1] * lam[2]])
    dphi = np.zeros((4, len(x), 3))
    for a in range(3):
        dphi[a, :, a] = 1.0
    dphi[3, :, 0] = 27.0 * lam[1] * lam[2]
    dphi[3, :, 1] = 27.0 * lam[0] * lam[2]
    dphi[3, :, 2] = 27.0 * lam[0] * lam[1]
    return lam, phi, dphi


@dataclass(frozen=True)
class _Geometry:
    detj: np.ndarray      # (nt,) twice the triangle area
    grad_lam: np.ndarray  # (nt, 3, 2)
    grad_phi: np.ndarray  # (nt, 4, nq, 2) physical basis gradients at quadrature points
    dofs: np.ndarray      # (nt, 4) scalar velocity dofs per triangle


def _geometry(mesh: Mesh) -> _Geometry:
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    detj = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # rows of J^{-1} are the gradients of the reference coordinates (l2, l3)
    inv = np.empty((len(detj), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / detj
    inv[:, 0, 1] = -e2[:, 0] / detj
    inv[:, 1, 0] = -e1[:, 1] / detj
    inv[:, 1, 1] = e1[:, 0] / detj
    grad_lam = np.empty((len(detj), 3, 2))
    grad_lam[:, 1:] = inv
    grad_lam[:, 0] = -inv[:, 0] - inv[:, 1]
    _, _, dphi = _reference_basis(QUAD_POINTS)
    grad_phi = np.einsum("aqm,tmk->taqk", dphi, grad_lam)
    dofs = np.column_stack([mesh.triangles, mesh.n_nodes + np.arange(mesh.n_triangles)])
    return _Geometry(detj, grad_lam, grad_phi, dofs)


_PHI = _reference_basis(QUAD_POINTS)[1]


def _scatter(dofs_row, dofs_col, local, shape):
    nt, nr = dofs_row.shape
    nc = dofs_col.shape[1]
    rows = np.broadcast_to(dofs_row[:, :, None], (nt, nr, nc)).ravel()
    cols = np.broadcast_to(dofs_col[:, None, :], (nt, nr, nc)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=shape)


def _blockdiag2(a):
    return sp.block_diag([a, a], format="csr")


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Vector Laplacian ``K_ij = (grad phi_i, grad phi_j)`` on the Mini space."""
    g = _geometry(mesh)
    local = np.einsum("q,taqk,tbqk->tab", QUAD_WEIGHTS, g.grad_phi, g.grad_phi) * g.detj[:, None, None]
    n = n_scalar_dofs(mesh)
    return _blockdiag2(_scatter(g.dofs, g.dofs, local, (n, n)))


def assemble_mass(mesh: Mesh):
    """Velocity mass matrix M (Mini) and pressure mass matrix Mp (P1)."""
    g = _geometry(mesh)
    ref = np.einsum("q,aq,bq->ab", QUAD_WEIGHTS, _PHI, _PHI)
    local = ref[None] * g.detj[:, None, None]
    n = n_scalar_dofs(mesh)
    M = _blockdiag2(_scatter(g.dofs, g.dofs, local, (n, n)))
    Mp = _scatter(mesh.triangles, mesh.triangles, local[:, :3, :3].copy(),
                  (mesh.n_nodes, mesh.n_nodes))
    return M, Mp


def _check_velocity(mesh, w, name="velocity field"):
    w = np.asarray(w, dtype=float)
    if w.shape != (n_velocity_dofs(mesh),):
        raise ValueError(f"{name} has shape {w.shape}, expected ({n_velocity_dofs(mesh)},)")
    return w


def velocity_at_quadrature(mesh: Mesh, w, geometry=None):
    """Values (nt, nq, 2) and gradients (nt, nq, 2, 2) of a velocity field.

    ``grad[t, q, k, m]`` is the derivative of component k with respect to x_m.
    """
    g = geometry or _geometry(mesh)
    n = n_scalar_dofs(mesh)
    w = np.asarray(w)
    coef = np.stack([w[:n][g.dofs], w[n:][g.dofs]], axis=-1)  # (nt, 4, 2)
    vals = np.einsum("aq,tak->tqk", _PHI, coef)
    grads = np.einsum("taqm,tak->tqkm", g.grad_phi, coef)
    return vals, grads


def assemble_convection(mesh: Mesh, w) -> sp.csr_matrix:
    """Skew-symmetric convection matrix for the convecting field ``w``.

    ``C = (C1 - C1^T) / 2`` with ``C1_ij = (w . grad phi_j, phi_i)``, applied
    to both velocity components.
    """
    w = _check_velocity(mesh, w, "convecting field")
    g = _geometry(mesh)
    wq, _ = velocity_at_quadrature(mesh, w, g)
    adv = np.einsum("tqk,tbqk->tbq", wq, g.grad_phi)  # w . grad phi_b
    local = np.einsum("q,aq,tbq->tab", QUAD_WEIGHTS, _PHI, adv) * g.detj[:, None, None]
    n = n_scalar_dofs(mesh)
    C1 = _scatter(g.dofs, g.dofs, local, (n, n))
    C = (0.5 * (C1 - C1.T)).tocsr()
    return _blockdiag2(C)


def assemble_divergence(mesh: Mesh) -> sp.csr_matrix:
    """``B_qi = -(div phi_i, psi_q)``: pressure rows, velocity columns."""
    g = _geometry(mesh)
    lam = _reference_basis(QUAD_POINTS)[0]
    n = n_scalar_dofs(mesh)
    blocks = []
    for k in range(2):
        local = -np.einsum("q,cq,taq->tca", QUAD_WEIGHTS, lam, g.grad_phi[..., k]) * g.detj[:, None, None]
        blocks.append(_scatter(mesh.triangles, g.dofs, local, (mesh.n_nodes, n)))
    return sp.hstack(blocks, format="csr")


def _line_matrices(mesh, edges):
    """1D P1 mass and stiffness on ``edges``, indexed by global node number."""
    nn = mesh.n_nodes
    if len(edges) == 0:
        z = sp.csr_matrix((nn, nn))
        return z, z
    p = mesh.nodes[edges]
    h = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    s = EDGE_POINTS
    phi = np.stack([1.0 - s, s])
    ref_mass = np.einsum("q,aq,bq->ab", EDGE_WEIGHTS, phi, phi)
    mass = ref_mass[None] * h[:, None, None]
    stiff = np.array([[1.0, -1.0], [-1.0, 1.0]])[None] / h[:, None, None]
    return (_scatter(edges, edges, mass, (nn, nn)),
            _scatter(edges, edges, stiff, (nn, nn)))


def _node_selector(n_rows, ids):
    """Sparse (n_rows, len(ids)) matrix with a one at (ids[j], j)."""
    return sp.csr_matrix((np.ones(len(ids)), (ids, np.arange(len(ids)))),
                         shape=(n_rows, len(ids)))


def outflow_extension(mesh: Mesh) -> sp.csr_matrix:
    """Map outflow-node values to all nodes on x = L.

    Interior outflow nodes keep their value; the two corner nodes copy the
    value of their neighbouring outflow node, so constants are represented
    exactly.  Shape (n_nodes, n_outflow).
    """
    out = boundary_nodes(mesh, BoundaryTag.OUTFLOW)
    rows, cols = list(out), list(range(len(out)))
    if len(out):
        right = np.flatnonzero(np.abs(mesh.nodes[:, 0] - mesh.length) <= 1e-12 * mesh.length)
        corners = right[mesh.node_tags[right] == BoundaryTag.WALL_CORNER]
        ys = mesh.nodes[out, 1]
        for c in corners:
            rows.append(c)
            cols.append(int(np.argmin(np.abs(ys - mesh.nodes[c, 1]))))
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_nodes, len(out)))


@dataclass(frozen=True)
class BoundaryOperators:
    R: sp.csr_matrix  # (nv, nv) boundary mass on inflow and wall
    E: sp.csr_matrix  # (nv, 2 n_in) extension by zero
    N: sp.csr_matrix  # (nv, 2 n_out) outflow boundary mass
    G: sp.csr_matrix  # (2 n_in, 2 n_in) H^1_0 Gramian on the inflow
    H: sp.csr_matrix  # (2 n_out, 2 n_out) L^2 Gramian on the outflow


def assemble_boundary(mesh: Mesh) -> BoundaryOperators:
    n = n_scalar_dofs(mesh)
    nn = mesh.n_nodes
    inflow = boundary_nodes(mesh, BoundaryTag.INFLOW)

    mass_d, _ = _line_matrices(mesh, mesh.edges_with_tag(BoundaryTag.INFLOW, BoundaryTag.WALL))
    pad = sp.csr_matrix((n - nn, n - nn))
    R = _blockdiag2(sp.block_diag([mass_d, pad], format="csr"))

    S_in = _node_selector(n, inflow)
    E = _blockdiag2(S_in)

    mass_in, stiff_in = _line_matrices(mesh, mesh.edges_with_tag(BoundaryTag.INFLOW))
    P_in = _node_selector(nn, inflow)
    G = _blockdiag2((P_in.T @ (mass_in + stiff_in) @ P_in).tocsr())

    mass_out, _ = _line_matrices(mesh, mesh.edges_with_tag(BoundaryTag.OUTFLOW))
    X = outflow_extension(mesh)
    H = _blockdiag2((X.T @ mass_out @ X).tocsr())
    N_scalar = sp.vstack([mass_out @ X, sp.csr_matrix((n - nn, X.shape[1]))], format="csr")
    N = _blockdiag2(N_scalar)
    return BoundaryOperators(R=R, E=E, N=N, G=G, H=H)


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Every sparse operator of the discrete state and filter systems."""

    mesh: Mesh
    K: sp.csr_matrix
    M: sp.csr_matrix
    Mp: sp.csr_matrix
    C: sp.csr_matrix
    B: sp.csr_matrix
    R: sp.csr_matrix
    E: sp.csr_matrix
    N: sp.csr_matrix
    G: sp.csr_matrix
    H: sp.csr_matrix

    @property
    def n_velocity(self) -> int:
        return self.M.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.Mp.shape[0]

    @property
    def n_inflow(self) -> int:
        return self.G.shape[0]

    @property
    def n_outflow(self) -> int:
        return self.H.shape[0]


def assemble_system(mesh: Mesh, u_delta) -> SystemMatrices:
    """Assemble K, M, Mp, C(u_delta), B and the boundary operators."""
    M, Mp = assemble_mass(mesh)
    bnd = assemble_boundary(mesh)
    return SystemMatrices(
        mesh=mesh,
        K=assemble_stiffness(mesh),
        M=M,
        Mp=Mp,
        C=assemble_convection(mesh, u_delta),
        B=assemble_divergence(mesh),
        R=bnd.R, E=bnd.E, N=bnd.N, G=bnd.G, H=bnd.H,
    )


def interpolate(mesh: Mesh, fn) -> np.ndarray:
    """Nodal interpolant of ``fn(x, y) -> (ux, uy)``; bubble coefficients are zero."""
    ux, uy = fn(mesh.nodes[:, 0], mesh.nodes[:, 1])
    n = n_scalar_dofs(mesh)
    v = np.zeros(2 * n)
    v[:mesh.n_nodes] = ux
    v[n:n + mesh.n_nodes] = uy
    return v


def interpolate_pressure(mesh: Mesh, fn) -> np.ndarray:
    return np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float) * np.ones(mesh.n_nodes)


def interpolate_boundary(mesh: Mesh, fn, tag: BoundaryTag) -> np.ndarray:
    """Nodal values of ``fn`` on the nodes of one boundary part, x-block first."""
    ids = boundary_nodes(mesh, tag)
    ux, uy = fn(mesh.nodes[ids, 0], mesh.nodes[ids, 1])
    return np.concatenate([np.broadcast_to(ux, ids.shape), np.broadcast_to(uy, ids.shape)]).astype(float)


def nodal_values(mesh: Mesh, v) -> np.ndarray:
    """(n_nodes, 2) array of the P1 part of a velocity field."""
    n = n_scalar_dofs(mesh)
    return np.column_stack([v[:mesh.n_nodes], v[n:n + mesh.n_nodes]])


# -- field CSV files ---------------------------------------------------------

def write_velocity_csv(mesh: Mesh, v, path) -> None:
    """Write the nodal part of ``v`` as ``node_id,ux,uy``; bubbles are dropped."""
    vals = nodal_values(mesh, v)
    buf = io.StringIO()
    buf.write("node_id,ux,uy\n")
    for i, (a, b) in enumerate(vals):
        buf.write(f"{i},{float(a)!r},{float(b)!r}\n")
    Path(path).write_text(buf.getvalue())


def write_pressure_csv(mesh: Mesh, p, path) -> None:
    buf = io.StringIO()
    buf.write("node_id,p\n")
    for i, a in enumerate(p):
        buf.write(f"{i},{float(a)!r}\n")
    Path(path).write_text(buf.getvalue())


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        rows = [r for r in reader if r]
    ids = np.array([int(r[0]) for r in rows])
    if not np.array_equal(ids, np.arange(len(rows))):
        raise ValueError(f"{path}: node ids must be 0..n-1 in order")
    return np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)


def read_velocity_csv(mesh: Mesh, path) -> np.ndarray:
    vals = _read_rows(path, ["node_id", "ux", "uy"])
    if len(vals) != mesh.n_nodes:
        raise ValueError(f"{path}: {len(vals)} rows for a mesh with {mesh.n_nodes} nodes")
    n = n_scalar_dofs(mesh)
    v = np.zeros(2 * n)
    v[:mesh.n_nodes] = vals[:, 0]
    v[n:n + mesh.n_nodes] = vals[:, 1]
    return v


def read_pressure_csv(mesh: Mesh, path) -> np.ndarray:
    vals = _read_rows(path, ["node_id", "p"])
    if len(vals) != mesh.n_nodes:
        raise ValueError(f"{path}: {len(vals)} rows for a mesh with {mesh.n_nodes} nodes")
    return vals[:, 0].copy()
