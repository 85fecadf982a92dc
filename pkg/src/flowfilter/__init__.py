"""Fluid-dynamically consistent filtering of noisy channel-flow velocity data.

Modules
-------
mesh      structured channel triangulations with boundary tags
fem       mini-element assembly (stiffness, mass, convection, divergence, boundary terms)
solver    linearized flow model: saddle-point factorization, state and adjoint solves
filters   smoothing, solenoidal and flow-model-constrained filters, discrepancy principle
testbed   Poiseuille test case, noise model, error norms, experiment drivers
cli       command-line interface
"""
from .mesh import BoundaryTag, Mesh, generate_channel_mesh, read_mesh, write_mesh
from .fem import SystemMatrices, assemble_system, interpolate
from .solver import ModelData, StateOperator, build_state_operator, solve_state
from .filters import (
    FdcProblem,
    FilterReport,
    discrepancy_select,
    fdc_filter,
    smoothing_filter,
    solenoidal_filter,
)
from .testbed import NoiseSpec, PoiseuilleCase, add_noise

__version__ = "0.1.0"
