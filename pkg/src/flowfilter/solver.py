"""Discrete linearized flow problem and its adjoint.

The state system reads::

    A u + B^T p = M f + (1/eps) R E g + N h
    B u         = 0

with ``A = nu K + C(u_delta) + (1/eps) R``.  One sparse LU factorization of
the saddle matrix serves both the state and the adjoint (transposed) solves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SystemMatrices

DEFAULT_NU = 0.01
DEFAULT_EPSILON = 1e-8


class FactorizationError(RuntimeError):
    """The saddle-point matrix could not be factorized."""


@dataclass(frozen=True)
class ModelData:
    """Controls of the flow model: volume force ``f``, inflow ``g``, outflow ``h``."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, matrices: SystemMatrices) -> "ModelData":
        return cls(np.zeros(matrices.n_velocity), np.zeros(matrices.n_inflow),
                   np.zeros(matrices.n_outflow))

    def check(self, matrices: SystemMatrices) -> None:
        want = (matrices.n_velocity, matrices.n_inflow, matrices.n_outflow)
        got = tuple(np.shape(x) for x in (self.f, self.g, self.h))
        if got != tuple((n,) for n in want):
            raise ValueError(f"model data shapes {got} do not match (f, g, h) sizes {want}")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.f, self.g, self.h])

    @classmethod
    def from_flat(cls, x, matrices: SystemMatrices) -> "ModelData":
        a = matrices.n_velocity
        b = a + matrices.n_inflow
        return cls(x[:a].copy(), x[a:b].copy(), x[b:].copy())

    def __add__(self, other):
        return ModelData(self.f + other.f, self.g + other.g, self.h + other.h)

    def __sub__(self, other):
        return ModelData(self.f - other.f, self.g - other.g, self.h - other.h)

    def __mul__(self, c):
        return ModelData(c * self.f, c * self.g, c * self.h)

    __rmul__ = __mul__


def saddle_matrix(A, B) -> sp.csc_matrix:
    npres = B.shape[0]
    return sp.bmat([[A, B.T], [B, sp.csr_matrix((npres, npres))]], format="csc")


class ScaledLU:
    """Sparse LU of ``D S D`` with ``D = diag(1 / sqrt(max_j |S_ij|))``.

    The penalty rows carry entries of size 1/eps; scaling them down before
    factorizing keeps the backward error at the level of the flow equations.
    ``refine`` extra steps of iterative refinement are applied per solve.
    """

    def __init__(self, S, refine=1):
        S = sp.csc_matrix(S)
        rowmax = abs(S).max(axis=1).toarray().ravel()
        if np.any(rowmax == 0):
            raise FactorizationError("matrix has an empty row")
        self.S = S
        self.d = 1.0 / np.sqrt(rowmax)
        D = sp.diags(self.d)
        self.refine = refine
        self.lu = spla.splu((D @ S @ D).tocsc())
        self.shape = S.shape

    def _raw(self, b, trans):
        return self.d * self.lu.solve(self.d * b, trans=trans)

    def solve(self, b, trans="N"):
        x = self._raw(b, trans)
        A = self.S if trans == "N" else self.S.T
        for _ in range(self.refine):
            x = x + self._raw(b - A @ x, trans)
        return x


def factorize(S, what="saddle matrix", refine=1) -> ScaledLU:
    try:
        lu = ScaledLU(S, refine)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise FactorizationError(f"{what} is singular: {exc}") from exc
    diag = np.abs(lu.lu.U.diagonal())
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max():
        raise FactorizationError(f"{what} is numerically singular "
                                 f"(pivot ratio {diag.min() / diag.max():.2e})")
    return lu


@dataclass(frozen=True, eq=False)
class StateOperator:
    """Factorized saddle matrix ``[[A, B^T], [B, 0]]`` for one convecting field."""

    matrices: SystemMatrices
    nu: float
    epsilon: float
    A: sp.csr_matrix
    lu: ScaledLU

    def solve(self, rhs_u, rhs_p=None, transpose=False):
        nv = self.matrices.n_velocity
        rhs = np.zeros(nv + self.matrices.n_pressure)
        rhs[:nv] = rhs_u
        if rhs_p is not None:
            rhs[nv:] = rhs_p
        x = self.lu.solve(rhs, trans="T" if transpose else "N")
        return x[:nv], x[nv:]

    def control_rhs(self, data: ModelData) -> np.ndarray:
        """Momentum right-hand side ``M f + (1/eps) R E g + N h``."""
        mats = self.matrices
        return mats.M @ data.f + (mats.R @ (mats.E @ data.g)) / self.epsilon + mats.N @ data.h

    def control_rhs_adjoint(self, z) -> ModelData:
        """Transpose of :meth:`control_rhs` applied to a velocity vector."""
        mats = self.matrices
        return ModelData(mats.M.T @ z, (mats.E.T @ (mats.R.T @ z)) / self.epsilon, mats.N.T @ z)


def build_state_operator(matrices: SystemMatrices, nu: float = DEFAULT_NU,
                         epsilon: float = DEFAULT_EPSILON) -> StateOperator:
    if not (np.isfinite(nu) and nu > 0):
        raise ValueError(f"nu must be positive, got {nu!r}")
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    A = (nu * matrices.K + matrices.C + matrices.R / epsilon).tocsr()
    lu = factorize(saddle_matrix(A, matrices.B), "state saddle matrix")
    return StateOperator(matrices, float(nu), float(epsilon), A, lu)


def solve_state(op: StateOperator, data: ModelData):
    """Velocity and pressure of the linearized flow model for the given controls."""
    data.check(op.matrices)
    return op.solve(op.control_rhs(data))


def solve_adjoint(op: StateOperator, residual):
    """Solve ``[[A^T, B^T], [B, 0]] (z, r) = (M residual, 0)``."""
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (op.matrices.n_velocity,):
        raise ValueError(f"residual has shape {residual.shape}, "
                         f"expected ({op.matrices.n_velocity},)")
    return op.solve(op.matrices.M @ residual, transpose=True)
