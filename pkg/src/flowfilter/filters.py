"""Velocity reconstruction filters.

Three filters share the same finite element machinery:

* smoothing: ``(M + alpha K) u = M u_delta``
* solenoidal: the same objective subject to ``B u = 0``
* fluid-dynamically consistent (fdc): minimize over the controls (f, g, h)::

      |u - u_delta|_M^2 + alpha (|f - f*|_M^2 + |g - g*|_G^2 + |h - h*|_H^2)

  where (u, p) solves the linearized flow model driven by (f, g, h).

The fdc problem is solved by conjugate gradients on the reduced functional
(one state and one adjoint solve per iteration, reusing the factorization of
the state operator); :func:`solve_full_kkt` solves the same optimality system
in one shot and is used as a cross-check.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SystemMatrices
from .solver import ModelData, StateOperator, factorize, saddle_matrix
from . import testbed

REPORT_HEADER = ["method", "alpha", "residual_l2", "err_u_l2", "err_u_h1", "err_p_l2",
                 "div_h", "iters", "seconds"]

CG_TOL = 1e-10
CG_MAXITER = 500
DISCREPANCY_KMAX = 40


class IterationLimitError(RuntimeError):
    """CG stopped at the iteration limit; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NoAdmissibleAlphaError(RuntimeError):
    """No grid value of alpha met the discrepancy criterion."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class FilterReport:
    method: str
    alpha: float
    residual_l2: float
    err_u_l2: float = float("nan")
    err_u_h1: float = float("nan")
    err_p_l2: float = float("nan")
    div_h: float = float("nan")
    iters: int = 0
    seconds: float = 0.0

    @property
    def err_total(self) -> float:
        return self.err_u_h1 + self.err_p_l2

    def as_row(self) -> list:
        out = []
        for k in REPORT_HEADER:
            v = getattr(self, k)
            if isinstance(v, str):
                out.append(v)
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append("nan" if not np.isfinite(v) else f"{float(v):.10g}")
        return out


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow(r.as_row())
    return buf.getvalue()


def residual_l2(matrices: SystemMatrices, u, u_delta) -> float:
    d = u - u_delta
    return float(np.sqrt(max(d @ (matrices.M @ d), 0.0)))


def make_report(method, matrices, u, p, u_delta, alpha, case=None, iters=0, seconds=0.0):
    """Build a :class:`FilterReport`; error columns are filled when ``case`` is given."""
    mesh = matrices.mesh
    rep = FilterReport(method=method, alpha=float(alpha),
                       residual_l2=residual_l2(matrices, u, u_delta),
                       div_h=testbed.discrete_divergence(mesh, u, matrices.B, matrices.Mp),
                       iters=int(iters), seconds=float(seconds))
    if case is not None:
        rep.err_u_l2, rep.err_u_h1 = testbed.velocity_errors(mesh, u, case)
        if p is not None:
            rep.err_p_l2 = testbed.pressure_error(mesh, p, case)
    return rep


# -- baseline filters --------------------------------------------------------------

def _check_alpha_nonneg(alpha):
    if not (np.isfinite(alpha) and alpha >= 0):
        raise ValueError(f"alpha must be finite and nonnegative, got {alpha!r}")


def smoothing_filter(matrices: SystemMatrices, u_delta, alpha: float) -> np.ndarray:
    """Solve the regularized normal equations ``(M + alpha K) u = M u_delta``."""
    _check_alpha_nonneg(alpha)
    lhs = (matrices.M + alpha * matrices.K).tocsc()
    return spla.splu(lhs).solve(matrices.M @ u_delta)


def solenoidal_filter(matrices: SystemMatrices, u_delta, alpha: float):
    """Closest discretely divergence-free field, optionally with gradient penalty.

    Returns the velocity and the Lagrange multiplier of ``B u = 0``.
    """
    _check_alpha_nonneg(alpha)
    nv = matrices.n_velocity
    S = saddle_matrix(matrices.M + alpha * matrices.K, matrices.B)
    lu = factorize(S, "solenoidal saddle matrix")
    rhs = np.zeros(S.shape[0])
    rhs[:nv] = matrices.M @ u_delta
    x = lu.solve(rhs)
    return x[:nv], x[nv:]


# -- fluid-dynamically consistent filter -------------------------------------------

@dataclass(frozen=True, eq=False)
class FdcProblem:
    op: StateOperator
    priors: ModelData
    u_delta: np.ndarray
    alpha: float

    def __post_init__(self):
        self.priors.check(self.op.matrices)
        if np.shape(self.u_delta) != (self.op.matrices.n_velocity,):
            raise ValueError("u_delta does not conform to the state operator")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    @property
    def matrices(self) -> SystemMatrices:
        return self.op.matrices

    def with_alpha(self, alpha: float) -> "FdcProblem":
        return replace(self, alpha=float(alpha))


class FdcResult(NamedTuple):
    u: np.ndarray
    p: np.ndarray
    controls: ModelData
    report: FilterReport


class _ControlGramian:
    """Block-diagonal Gramian W = diag(M, G, H) on the flattened controls."""

    def __init__(self, matrices: SystemMatrices):
        self.W = sp.block_diag([matrices.M, matrices.G, matrices.H], format="csr")
        self._blocks = [matrices.M, matrices.G, matrices.H]
        self._lus = [spla.splu(b.tocsc()) if b.shape[0] else None for b in self._blocks]
        self._slices = np.cumsum([0] + [b.shape[0] for b in self._blocks])

    def solve(self, r):
        out = np.empty_like(r)
        for lu, a, b in zip(self._lus, self._slices[:-1], self._slices[1:]):
            if lu is not None:
                out[a:b] = lu.solve(r[a:b])
        return out


def _control_matrix(op: StateOperator) -> sp.csr_matrix:
    """Q = [M, (1/eps) R E, N], mapping flattened controls to the momentum right-hand side."""
    m = op.matrices
    return sp.hstack([m.M, (m.R @ m.E) / op.epsilon, m.N], format="csr")


def reduced_objective(problem: FdcProblem, controls: ModelData) -> float:
    """Reduced functional J_alpha at ``controls``."""
    m = problem.matrices
    u, _ = problem.op.solve(problem.op.control_rhs(controls))
    d = controls - problem.priors
    misfit = residual_l2(m, u, problem.u_delta) ** 2
    penalty = d.f @ (m.M @ d.f) + d.g @ (m.G @ d.g) + d.h @ (m.H @ d.h)
    return float(misfit + problem.alpha * penalty)


def reduced_gradient(problem: FdcProblem, controls: ModelData) -> ModelData:
    """Euclidean gradient of J_alpha with respect to the coefficients of (f, g, h)."""
    controls.check(problem.matrices)
    m, op = problem.matrices, problem.op
    u, _ = op.solve(op.control_rhs(controls))
    z, _ = op.solve(m.M @ (u - problem.u_delta), transpose=True)
    pull = op.control_rhs_adjoint(z)
    d = controls - problem.priors
    a = problem.alpha
    return ModelData(2.0 * pull.f + 2.0 * a * (m.M @ d.f),
                     2.0 * pull.g + 2.0 * a * (m.G @ d.g),
                     2.0 * pull.h + 2.0 * a * (m.H @ d.h))


def _pcg(apply_h, b, x0, precond, tol, maxiter, ref_norm=None):
    """Preconditioned CG; stops when ``|r|_P <= tol * ref_norm`` (default: initial residual)."""
    x = x0.copy()
    r = b - apply_h(x)
    z = precond(r)
    rz = r @ z
    ref = np.sqrt(max(rz, 0.0)) if ref_norm is None else ref_norm
    d = z.copy()
    k = 0
    while np.sqrt(max(rz, 0.0)) > tol * ref:
        if k == maxiter:
            return x, k, False, np.sqrt(max(rz, 0.0)) / ref
        hd = apply_h(d)
        step = rz / (d @ hd)
        x += step * d
        r -= step * hd
        z = precond(r)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
        k += 1
    return x, k, True, np.sqrt(max(rz, 0.0)) / max(ref, np.finfo(float).tiny)


def fdc_filter(problem: FdcProblem, x0: Optional[ModelData] = None, tol: float = CG_TOL,
               maxiter: int = CG_MAXITER, case=None) -> FdcResult:
    """Minimize the reduced functional by CG in the control inner product.

    Starts from the priors unless ``x0`` is given.  The stopping test is
    relative to the preconditioned gradient norm at the priors, so warm
    starts stop at the same accuracy as cold starts.
    """
    if not problem.alpha > 0:
        raise ValueError(f"fdc filter needs alpha > 0, got {problem.alpha!r}")
    t0 = time.perf_counter()
    m, op = problem.matrices, problem.op
    Q = _control_matrix(op)
    W = _ControlGramian(m)
    alpha = problem.alpha

    def state(x):
        return op.solve(Q @ x)

    def apply_h(x):
        u, _ = state(x)
        z, _ = op.solve(m.M @ u, transpose=True)
        return 2.0 * (Q.T @ z) + 2.0 * alpha * (W.W @ x)

    zd, _ = op.solve(m.M @ problem.u_delta, transpose=True)
    xstar = problem.priors.flat()
    b = 2.0 * (Q.T @ zd) + 2.0 * alpha * (W.W @ xstar)
    r_star = b - apply_h(xstar)
    ref = np.sqrt(max(r_star @ W.solve(r_star), 0.0))
    start = xstar if x0 is None else x0.flat()
    if ref == 0.0:
        x, iters, ok = xstar.copy(), 0, True
    else:
        x, iters, ok, _ = _pcg(apply_h, b, start, W.solve, tol, maxiter, ref_norm=ref)
    u, p = state(x)
    controls = ModelData.from_flat(x, m)
    report = make_report("fdc", m, u, p, problem.u_delta, alpha, case, iters,
                         time.perf_counter() - t0)
    result = FdcResult(u, p, controls, report)
    if not ok:
        raise IterationLimitError(f"CG did not converge in {maxiter} iterations "
                                  f"(alpha={alpha:g})", result)
    return result


def kkt_matrix(problem: FdcProblem) -> sp.csc_matrix:
    """Symmetric indefinite optimality matrix in the unknowns (u, p, f, g, h, lam, mu)."""
    m, op = problem.matrices, problem.op
    Q = _control_matrix(op)
    W = sp.block_diag([m.M, m.G, m.H], format="csr")
    nv, npr = m.n_velocity, m.n_pressure
    return sp.bmat([
        [m.M, None, None, op.A.T, m.B.T],
        [None, sp.csr_matrix((npr, npr)), None, m.B, None],
        [None, None, problem.alpha * W, -Q.T, None],
        [op.A, m.B.T, -Q, sp.csr_matrix((nv, nv)), None],
        [m.B, None, None, None, sp.csr_matrix((npr, npr))],
    ], format="csc")


def solve_full_kkt(problem: FdcProblem, case=None) -> FdcResult:
    """One-shot direct solve of the optimality system (cross-check for :func:`fdc_filter`)."""
    if not problem.alpha > 0:
        raise ValueError(f"fdc filter needs alpha > 0, got {problem.alpha!r}")
    t0 = time.perf_counter()
    m = problem.matrices
    S = kkt_matrix(problem)
    W = sp.block_diag([m.M, m.G, m.H], format="csr")
    nv, npr = m.n_velocity, m.n_pressure
    nc = W.shape[0]
    rhs = np.zeros(S.shape[0])
    rhs[:nv] = m.M @ problem.u_delta
    rhs[nv + npr:nv + npr + nc] = problem.alpha * (W @ problem.priors.flat())
    lu = factorize(S, "KKT matrix")
    sol = lu.solve(rhs)
    u, p = sol[:nv], sol[nv:nv + npr]
    controls = ModelData.from_flat(sol[nv + npr:nv + npr + nc], m)
    report = make_report("fdc-kkt", m, u, p, problem.u_delta, problem.alpha, case, 0,
                         time.perf_counter() - t0)
    return FdcResult(u, p, controls, report)


# -- parameter choice --------------------------------------------------------------

@dataclass
class DiscrepancyOutcome:
    alpha: float
    k: int
    result: object
    trace: list = field(default_factory=list)  # (k, alpha, residual)


def discrepancy_search(solve: Callable[[float, object], tuple], delta: float, tau: float,
                       alpha0: float = 1.0, kmax: int = DISCREPANCY_KMAX) -> DiscrepancyOutcome:
    """Largest ``alpha0 * 2**-k`` whose residual is at most ``tau * delta``.

    ``solve(alpha, previous)`` returns ``(residual, result)``; ``previous`` is
    the result at the preceding grid value (None at k = 0) and may be used for
    warm starts.
    """
    if not tau > 1:
        raise ValueError(f"tau must exceed 1, got {tau!r}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0!r}")
    trace, prev = [], None
    for k in range(kmax + 1):
        alpha = alpha0 * 2.0 ** (-k)
        res, prev = solve(alpha, prev)
        trace.append((k, alpha, res))
        if res <= tau * delta:
            return DiscrepancyOutcome(alpha, k, prev, trace)
    raise NoAdmissibleAlphaError(
        f"no alpha in {alpha0:g} * 2^-k, k <= {kmax}, gives residual <= {tau * delta:g}", trace)


def discrepancy_select(problem: FdcProblem, delta: float, tau: float, alpha0: float = 1.0,
                       kmax: int = DISCREPANCY_KMAX, case=None, **cg):
    """Discrepancy principle for the fdc filter; ``problem.alpha`` is ignored.

    Returns ``(alpha_dis, FdcResult, trace)``.  Each CG run is warm-started
    from the controls at the previous grid value.
    """
    def solve(alpha, prev):
        x0 = prev.controls if prev is not None else None
        res = fdc_filter(problem.with_alpha(alpha), x0=x0, case=case, **cg)
        return res.report.residual_l2, res

    out = discrepancy_search(solve, delta, tau, alpha0, kmax)
    return out.alpha, out.result, out.trace


def run_baseline(method: str, matrices: SystemMatrices, u_delta, alpha: float, case=None) -> FdcResult:
    """Run ``smooth`` or ``solenoidal`` and wrap the output like the fdc filter."""
    t0 = time.perf_counter()
    if method == "smooth":
        u, p = smoothing_filter(matrices, u_delta, alpha), None
    elif method == "solenoidal":
        u, p = solenoidal_filter(matrices, u_delta, alpha)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    rep = make_report(method, matrices, u, p, u_delta, alpha, case, 0, time.perf_counter() - t0)
    return FdcResult(u, p, None, rep)


def baseline_discrepancy(method: str, matrices: SystemMatrices, u_delta, delta: float, tau: float,
                         alpha0: float = 1.0, kmax: int = DISCREPANCY_KMAX, case=None):
    """Discrepancy principle for the smoothing or solenoidal filter."""
    def solve(alpha, prev):
        res = run_baseline(method, matrices, u_delta, alpha, case)
        return res.report.residual_l2, res

    out = discrepancy_search(solve, delta, tau, alpha0, kmax)
    return out.alpha, out.result, out.trace
