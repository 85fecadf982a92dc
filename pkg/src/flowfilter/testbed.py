"""Poiseuille channel reference, noise injection and error norms."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    QUAD_POINTS,
    QUAD_WEIGHTS,
    _geometry,
    assemble_divergence,
    assemble_mass,
    assemble_system,
    interpolate,
    interpolate_boundary,
    n_velocity_dofs,
    velocity_at_quadrature,
)
from .mesh import BoundaryTag, Mesh, generate_channel_mesh
from .solver import DEFAULT_EPSILON, ModelData, build_state_operator, solve_state


@dataclass(frozen=True)
class PoiseuilleCase:
    """Laminar flow between two plates driven by the pressure drop p0 -> pL."""

    length: float = 5.0
    height: float = 1.0
    nu: float = 0.01
    p0: float = 1.0
    pL: float = 0.0

    def __post_init__(self):
        if min(self.length, self.height, self.nu) <= 0:
            raise ValueError("length, height and nu must be positive")

    @property
    def _amp(self):
        return (self.p0 - self.pL) / (2.0 * self.nu * self.length)

    def velocity(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self._amp * y * (self.height - y) + 0.0 * x, np.zeros(np.broadcast(x, y).shape)

    def velocity_gradient(self, x, y):
        """Array (..., 2, 2) with entry [k, m] = d u_k / d x_m."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        grad = np.zeros(shape + (2, 2))
        grad[..., 0, 1] = self._amp * (self.height - 2.0 * y)
        return grad

    def pressure(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return self.p0 + (self.pL - self.p0) / self.length * x + 0.0 * y

    def force(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.zeros(shape), np.zeros(shape)

    def inflow(self, x, y):
        return self.velocity(0.0 * np.asarray(x), y)

    def outflow_traction(self, x, y):
        """Physical traction ``(-nu grad u + u (x) u / 2 + p I) n`` at x = L, n = (1, 0).

        For the parabolic profile du/dx vanishes and p(L) = pL, leaving
        ``pL + u_x^2 / 2`` in the x-component.
        """
        ux, _ = self.velocity(self.length + 0.0 * np.asarray(x), y)
        return self.pL + 0.5 * ux * ux, np.zeros_like(ux)

    def outflow_data(self, x, y):
        """Outflow control ``h`` as it enters the momentum right-hand side ``+ N h``.

        Integration by parts puts the traction on the right-hand side with a
        minus sign, so ``h`` is the negated traction: ``(-50 y^2 (1-y)^2, 0)``
        for the default case.
        """
        tx, ty = self.outflow_traction(x, y)
        return -tx, -ty

    def model_data(self, mesh: Mesh) -> ModelData:
        """Nodal representation of the exact controls (f, g, h) on ``mesh``."""
        return ModelData(
            f=interpolate(mesh, self.force),
            g=interpolate_boundary(mesh, self.inflow, BoundaryTag.INFLOW),
            h=interpolate_boundary(mesh, self.outflow_data, BoundaryTag.OUTFLOW),
        )

    def mesh(self, nx: int, ny: int) -> Mesh:
        return generate_channel_mesh(self.length, self.height, nx, ny)


def poiseuille_exact(case: PoiseuilleCase = PoiseuilleCase()):
    """Closed-form velocity and pressure evaluators and the exact-control builder."""
    return case.velocity, case.pressure, case.model_data


# -- norms ---------------------------------------------------------------------

def _physical_points(mesh, geometry=None):
    p = mesh.nodes[mesh.triangles]
    x = p[:, 0, 0][:, None] + np.outer(p[:, 1, 0] - p[:, 0, 0], QUAD_POINTS[:, 0]) \
        + np.outer(p[:, 2, 0] - p[:, 0, 0], QUAD_POINTS[:, 1])
    y = p[:, 0, 1][:, None] + np.outer(p[:, 1, 1] - p[:, 0, 1], QUAD_POINTS[:, 0]) \
        + np.outer(p[:, 2, 1] - p[:, 0, 1], QUAD_POINTS[:, 1])
    return x, y


def _integrate(mesh, values, geometry=None):
    g = geometry or _geometry(mesh)
    return float(np.einsum("q,tq,t->", QUAD_WEIGHTS, values, g.detj))


def norm_l3(mesh: Mesh, v) -> float:
    """``(int |v|^3)^(1/3)`` of a Mini velocity field by quadrature."""
    vals, _ = velocity_at_quadrature(mesh, v)
    mag = np.sqrt(np.sum(vals ** 2, axis=-1))
    return _integrate(mesh, mag ** 3) ** (1.0 / 3.0)


def norm_l2(mesh: Mesh, v) -> float:
    vals, _ = velocity_at_quadrature(mesh, v)
    return np.sqrt(_integrate(mesh, np.sum(vals ** 2, axis=-1)))


def norm_h1(mesh: Mesh, v) -> float:
    vals, grads = velocity_at_quadrature(mesh, v)
    return np.sqrt(_integrate(mesh, np.sum(vals ** 2, axis=-1) + np.sum(grads ** 2, axis=(-1, -2))))


def pressure_at_quadrature(mesh: Mesh, p):
    lam = np.stack([1.0 - QUAD_POINTS[:, 0] - QUAD_POINTS[:, 1], QUAD_POINTS[:, 0], QUAD_POINTS[:, 1]])
    return np.einsum("cq,tc->tq", lam, np.asarray(p)[mesh.triangles])


def velocity_errors(mesh: Mesh, u, case: PoiseuilleCase):
    """L2 and full H1 norms of ``u - u_exact``, the exact field evaluated at quadrature points."""
    g = _geometry(mesh)
    vals, grads = velocity_at_quadrature(mesh, u, g)
    x, y = _physical_points(mesh)
    ex = np.stack(case.velocity(x, y), axis=-1)
    dex = case.velocity_gradient(x, y)
    l2sq = _integrate(mesh, np.sum((vals - ex) ** 2, axis=-1), g)
    semi = _integrate(mesh, np.sum((grads - dex) ** 2, axis=(-1, -2)), g)
    return np.sqrt(l2sq), np.sqrt(l2sq + semi)


def pressure_error(mesh: Mesh, p, case: PoiseuilleCase) -> float:
    x, y = _physical_points(mesh)
    d = pressure_at_quadrature(mesh, p) - case.pressure(x, y)
    return np.sqrt(_integrate(mesh, d ** 2))


def discrete_divergence(mesh: Mesh, u, B=None, Mp=None) -> float:
    """``sqrt((B u)^T Mp^{-1} (B u))``: L2 norm of the projected divergence."""
    if B is None:
        B = assemble_divergence(mesh)
    if Mp is None:
        _, Mp = assemble_mass(mesh)
    r = B @ u
    return float(np.sqrt(max(r @ spla.spsolve(Mp.tocsc(), r), 0.0)))


def error_norms(mesh: Mesh, u, p, case: PoiseuilleCase, B=None, Mp=None):
    """(err_l2, err_h1, err_p, div_h); err_p is nan when ``p`` is None."""
    err_l2, err_h1 = velocity_errors(mesh, u, case)
    err_p = pressure_error(mesh, p, case) if p is not None else float("nan")
    return err_l2, err_h1, err_p, discrete_divergence(mesh, u, B, Mp)


def misspecified_priors(mesh: Mesh, priors: ModelData, offset: float) -> ModelData:
    """Priors whose force is off by a uniform transverse body force of L2 norm ``offset``.

    The perturbation ``(0, c)`` acts across the channel like a wrongly assumed
    gravity.  It is a gradient field, so the flow it drives differs from the
    true one in the pressure only.
    """
    if not (np.isfinite(offset) and offset >= 0):
        raise ValueError(f"offset must be finite and nonnegative, got {offset!r}")
    if offset == 0:
        return priors
    shift = interpolate(mesh, lambda x, y: (0.0 * x, 1.0 + 0.0 * y))
    M, _ = assemble_mass(mesh)
    shift *= offset / np.sqrt(shift @ (M @ shift))
    return ModelData(priors.f + shift, priors.g, priors.h)


# -- noise -----------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be nonnegative, got {self.delta!r}")


def add_noise(mesh: Mesh, clean, spec: NoiseSpec) -> np.ndarray:
    """Perturb the nodal values of ``clean`` by white Gaussian noise of L3 norm ``delta``.

    Both components of every node are perturbed; bubble coefficients are left
    alone.  A single global factor rescales the draw.
    """
    clean = np.asarray(clean, dtype=float)
    if mesh.n_nodes == 0 or clean.shape != (n_velocity_dofs(mesh),):
        raise ValueError("clean field does not conform to the mesh")
    if spec.delta == 0:
        return clean.copy()
    rng = np.random.default_rng(spec.seed)
    n = mesh.n_nodes + mesh.n_triangles
    noise = np.zeros_like(clean)
    draw = rng.standard_normal((2, mesh.n_nodes))
    noise[:mesh.n_nodes] = draw[0]
    noise[n:n + mesh.n_nodes] = draw[1]
    noise *= spec.delta / norm_l3(mesh, noise)
    return clean + noise


# -- linearization experiment ------------------------------------------------

def linearization_experiment(ny_ladder, deltas, seed=0, case: PoiseuilleCase = PoiseuilleCase(),
                             epsilon=DEFAULT_EPSILON):
    """Solve the linearized model with exact controls on noisy convecting fields.

    Returns a list of dict rows with keys mesh_ny, delta, seed, err_u_h1,
    err_p_l2.  Meshes use ``nx = 5 * ny``.
    """
    if not len(ny_ladder) or not len(deltas):
        raise ValueError("need at least one mesh and one noise level")
    rows = []
    for ny in ny_ladder:
        mesh = case.mesh(int(round(case.length / case.height)) * ny, ny)
        clean = interpolate(mesh, case.velocity)
        data = case.model_data(mesh)
        for cell, delta in enumerate(deltas):
            u_delta = add_noise(mesh, clean, NoiseSpec(delta, seed))
            op = build_state_operator(assemble_system(mesh, u_delta), case.nu, epsilon)
            u, p = solve_state(op, data)
            _, err_h1 = velocity_errors(mesh, u, case)
            rows.append(dict(mesh_ny=ny, delta=delta, seed=seed, err_u_h1=err_h1,
                             err_p_l2=pressure_error(mesh, p, case)))
    return rows


LINEARIZATION_HEADER = ["mesh_ny", "delta", "seed", "err_u_h1", "err_p_l2"]
SWEEP_HEADER = ["alpha", "delta", "residual", "err_total"]


def rows_to_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in header])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"
