"""Nonlinear density-matrix dynamics with a completely separable N-particle extension."""
from .dynamics import (IntegratorConfig, NonFiniteStateError, StepSizeUnderflow, Trajectory,
                       evolve, lvn_rhs, schrodinger_rhs)
from .extension import (ExtensionSpec, JointOperator, embed_operator, extend, naive_extend,
                        split_spec, staged_extend)
from .kernels import (FloorMonitor, NonlinearKernel, bbm_kernel, compose_kernels, current_density,
                      doebner_goldin_kernel, haag_bannier_kernel, harmonic_potential,
                      homogeneous_kernel, kinetic_kernel, nls_kernel, potential_kernel,
                      twarock_kernel)
from .lattice import Grid, derivative_operator, integrate, make_grid
from .states import (CompositeLayout, DensityMatrix, WaveFunction, diagnostics, distance,
                     maximally_mixed, partial_trace, pure_projector, tensor_product,
                     tensor_wavefunctions)

__version__ = "0.1.0"

__all__ = [
    "CompositeLayout", "DensityMatrix", "ExtensionSpec", "FloorMonitor", "Grid",
    "IntegratorConfig", "JointOperator", "NonFiniteStateError", "NonlinearKernel",
    "StepSizeUnderflow", "Trajectory", "WaveFunction", "bbm_kernel", "compose_kernels",
    "current_density", "derivative_operator", "diagnostics", "distance", "doebner_goldin_kernel",
    "embed_operator", "evolve", "extend", "haag_bannier_kernel", "harmonic_potential",
    "homogeneous_kernel", "integrate", "kinetic_kernel", "lvn_rhs", "make_grid",
    "maximally_mixed", "naive_extend", "nls_kernel", "partial_trace", "potential_kernel",
    "pure_projector", "schrodinger_rhs", "split_spec", "staged_extend", "tensor_product",
    "tensor_wavefunctions", "twarock_kernel",
]
