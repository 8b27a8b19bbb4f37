"""N-particle Hamiltonians assembled from 1-particle kernels.

The separable recipe evaluates each subsystem's kernel on that subsystem's
reduced density matrix and adds it to the joint operator tensored with
identities. The naive recipe (pure states only) evaluates the 1-particle
pure-state expressions pointwise in the joint coordinates instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .kernels import FloorMonitor, NonlinearKernel, _along
from .states import (CompositeLayout, DensityMatrix, WaveFunction,
                     partial_trace_matrix, pure_marginal)

MODES = ("correct", "naive")


@dataclass(frozen=True, eq=False)
class ExtensionSpec:
    layout: CompositeLayout
    assignments: tuple[tuple[int, NonlinearKernel], ...]
    mode: str = "correct"

    def __post_init__(self):
        assignments = tuple((int(i), k) for i, k in self.assignments)
        seen = set()
        for i, kernel in assignments:
            if not 0 <= i < len(self.layout):
                raise IndexError(f"subsystem {i} outside layout of {len(self.layout)} factors")
            if i in seen:
                raise ValueError(f"subsystem {i} assigned more than once")
            seen.add(i)
            if kernel.grid != self.layout.factors[i]:
                raise ValueError(f"kernel for subsystem {i} lives on a different grid")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "assignments", tuple(sorted(assignments, key=lambda p: p[0])))

    @classmethod
    def single(cls, kernel: NonlinearKernel) -> "ExtensionSpec":
        return cls(CompositeLayout((kernel.grid,)), ((0, kernel),))

    def kernel_for(self, index: int) -> NonlinearKernel | None:
        for i, k in self.assignments:
            if i == index:
                return k
        return None

    def with_mode(self, mode: str) -> "ExtensionSpec":
        return ExtensionSpec(self.layout, self.assignments, mode)

    def restricted(self, indices: Sequence[int]) -> "ExtensionSpec":
        """Spec for the sub-layout ``indices`` (renumbered from zero)."""
        indices = sorted(indices)
        where = {old: new for new, old in enumerate(indices)}
        return ExtensionSpec(self.layout.sub(indices),
                             tuple((where[i], k) for i, k in self.assignments if i in where),
                             self.mode)

    @property
    def is_linear(self) -> bool:
        return all(k.is_linear for _, k in self.assignments)


class JointOperator:
    """``sum_k 1 x .. x K_k x .. x 1 + diag(W)`` kept in factored form.

    ``local`` holds the state-independent dense blocks per axis, ``diagonal``
    the full joint diagonal (shape ``dims``).
    """

    def __init__(self, dims: Sequence[int], local: Sequence[tuple[int, np.ndarray]],
                 diagonal: np.ndarray | None):
        self.dims = tuple(dims)
        self.local = list(local)
        self.diagonal = diagonal

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``H @ x`` for a vector or a matrix whose rows are joint indices."""
        vec = x.ndim == 1
        x2 = x.reshape(self.dim, -1)
        t = x2.reshape(self.dims + (x2.shape[1],))
        out = np.zeros(x2.shape, dtype=complex)
        for axis, mat in self.local:
            out += _along(mat, t, axis).reshape(x2.shape)
        if self.diagonal is not None:
            _accel.add_row_scaled(out, self.diagonal.reshape(-1), x2)
        return out.reshape(-1) if vec else out

    __matmul__ = apply

    def matrix(self) -> np.ndarray:
        n = self.dim
        out = np.zeros((n, n), dtype=complex)
        for axis, mat in self.local:
            pre = int(np.prod(self.dims[:axis]))
            post = int(np.prod(self.dims[axis + 1:]))
            out += np.kron(np.kron(np.eye(pre), mat), np.eye(post))
        if self.diagonal is not None:
            out[np.diag_indices(n)] += self.diagonal.reshape(-1)
        return out


def _broadcast_axis(values: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = -1
    return values.reshape(shape)


def _check_layout(layout: CompositeLayout, spec: ExtensionSpec):
    if layout != spec.layout:
        raise ValueError("state layout does not match the extension layout")


def _assemble(spec: ExtensionSpec, marginals: dict[int, np.ndarray],
              monitor: FloorMonitor | None) -> JointOperator:
    dims = spec.layout.dims
    local = []
    diag = None
    for k, kernel in spec.assignments:
        if kernel.dense is not None:
            local.append((k, kernel.dense))
        w = kernel.local_diagonal(marginals[k], monitor) if k in marginals else kernel.potential
        if w is not None:
            wb = _broadcast_axis(w, k, len(dims))
            diag = wb if diag is None else diag + wb
    if diag is not None:
        diag = np.broadcast_to(diag, dims)
    return JointOperator(dims, local, diag)


def _nonlinear_indices(spec: ExtensionSpec) -> list[int]:
    return [k for k, kernel in spec.assignments if not kernel.is_linear]


def marginals_of_matrix(rho: np.ndarray, layout: CompositeLayout,
                        indices: Sequence[int]) -> dict[int, np.ndarray]:
    if len(layout) == 1:
        return {i: rho for i in indices}
    mu = layout.measure
    return {k: partial_trace_matrix(rho, layout.dims, (k,), mu / layout.factors[k].spacing)
            for k in indices}


def marginals_of_pure(psi: np.ndarray, layout: CompositeLayout,
                      indices: Sequence[int]) -> dict[int, np.ndarray]:
    mu = layout.measure
    return {k: pure_marginal(psi, layout.dims, k, mu / layout.factors[k].spacing)
            for k in indices}


def extended_operator(rho: np.ndarray, spec: ExtensionSpec,
                      monitor: FloorMonitor | None = None) -> JointOperator:
    """Factored joint Hamiltonian for a joint density-matrix array."""
    return _assemble(spec, marginals_of_matrix(rho, spec.layout, _nonlinear_indices(spec)),
                     monitor)


def extended_operator_pure(psi: np.ndarray, spec: ExtensionSpec,
                           monitor: FloorMonitor | None = None) -> JointOperator:
    """Same operator as :func:`extended_operator` on ``|psi><psi|``, built from ``psi``."""
    return _assemble(spec, marginals_of_pure(psi, spec.layout, _nonlinear_indices(spec)),
                     monitor)


def naive_operator(psi: np.ndarray, spec: ExtensionSpec,
                   monitor: FloorMonitor | None = None) -> JointOperator:
    """Joint operator of the naive recipe: pointwise joint-coordinate moments."""
    dims = spec.layout.dims
    t = np.asarray(psi).reshape(dims)
    local = []
    diag = np.zeros(dims)
    for k, kernel in spec.assignments:
        if kernel.dense is not None:
            local.append((k, kernel.dense))
        if kernel.potential is not None:
            diag = diag + _broadcast_axis(kernel.potential, k, len(dims))
        if kernel.terms:
            diag = diag + kernel.nonlinear_diagonal(kernel.pointwise_moments(t, k), monitor)
    return JointOperator(dims, local, diag)


def extend(rho_joint: DensityMatrix, spec: ExtensionSpec,
           monitor: FloorMonitor | None = None) -> np.ndarray:
    """Dense joint Hamiltonian ``sum_k 1 x .. x H_k(rho^(k)) x .. x 1``."""
    if spec.mode != "correct":
        raise ValueError("extend builds the separable operator; use naive_extend for mode='naive'")
    _check_layout(rho_joint.layout, spec)
    return extended_operator(rho_joint.matrix, spec, monitor).matrix()


def naive_extend(psi_joint: WaveFunction, spec: ExtensionSpec,
                 monitor: FloorMonitor | None = None) -> np.ndarray:
    """Dense joint Hamiltonian of the naive (non-integral) recipe."""
    _check_layout(psi_joint.layout, spec)
    return naive_operator(psi_joint.amplitudes, spec, monitor).matrix()


def embed_operator(op: np.ndarray, positions: Sequence[int],
                   layout: CompositeLayout) -> np.ndarray:
    """Tensor ``op`` (acting on factors ``positions``) with identities elsewhere."""
    dims = layout.dims
    positions = list(positions)
    rest = [i for i in range(len(dims)) if i not in positions]
    order = positions + rest
    n_rest = int(np.prod([dims[i] for i in rest]))
    full = np.kron(op, np.eye(n_rest))
    if order == list(range(len(dims))):
        return full
    odims = tuple(dims[i] for i in order)
    t = full.reshape(odims + odims)
    inv = [order.index(i) for i in range(len(dims))]
    perm = inv + [len(dims) + i for i in inv]
    n = layout.dim
    return np.ascontiguousarray(t.transpose(perm)).reshape(n, n)


def split_spec(spec: ExtensionSpec,
               partition: Sequence[Sequence[int]]) -> list[tuple[tuple[int, ...], ExtensionSpec]]:
    """Group specs for :func:`staged_extend` from a flat spec and a partition."""
    return [(tuple(sorted(block)), spec.restricted(block)) for block in partition]


def _check_partition(blocks: Sequence[Sequence[int]], n: int):
    flat = [i for b in blocks for i in b]
    if any(len(b) == 0 for b in blocks):
        raise ValueError("empty block in partition")
    if len(flat) != len(set(flat)):
        raise ValueError("partition blocks overlap")
    if set(flat) != set(range(n)):
        raise ValueError(f"partition {blocks} does not cover subsystems 0..{n - 1}")


def staged_extend(groups: Sequence[tuple[Sequence[int], ExtensionSpec]],
                  rho_joint: DensityMatrix,
                  monitor: FloorMonitor | None = None) -> np.ndarray:
    """Build each group's composite Hamiltonian on the group's reduced state,
    then embed the groups into the joint space and add them up."""
    layout = rho_joint.layout
    _check_partition([g for g, _ in groups], len(layout))
    out = np.zeros((layout.dim, layout.dim), dtype=complex)
    for block, gspec in groups:
        block = tuple(sorted(block))
        if gspec.layout != layout.sub(block):
            raise ValueError(f"group spec layout does not match factors {block}")
        weight = float(np.prod([g.spacing for i, g in enumerate(layout.factors)
                                if i not in block]))
        sub = partial_trace_matrix(rho_joint.matrix, layout.dims, block, weight)
        h = extended_operator(sub, gspec, monitor).matrix()
        out += embed_operator(h, block, layout)
    return out
