"""Pure states, density matrices and the tensor bookkeeping between them.

Stored matrix entries are samples of the continuum kernel ``rho(a, a')``; the
grid measure enters only through operations (traces, partial traces, norms),
never through the stored values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from . import _accel
from .lattice import Grid

NORM_TOL = 1e-8


@dataclass(frozen=True)
class CompositeLayout:
    """Ordered tensor factors of a multi-particle configuration space."""

    factors: tuple[Grid, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise ValueError("a layout needs at least one factor")
        if not all(isinstance(g, Grid) for g in factors):
            raise TypeError("layout factors must be Grid instances")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def of(cls, *grids: Grid) -> "CompositeLayout":
        return cls(tuple(grids))

    @classmethod
    def repeated(cls, grid: Grid, count: int) -> "CompositeLayout":
        return cls((grid,) * count)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(g.n_points for g in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def measure(self) -> float:
        """Volume element ``da_1 ... da_N`` of one joint grid cell."""
        return float(np.prod([g.spacing for g in self.factors]))

    def __len__(self):
        return len(self.factors)

    def sub(self, indices: Sequence[int]) -> "CompositeLayout":
        return CompositeLayout(tuple(self.factors[i] for i in indices))


def _as_layout(layout) -> CompositeLayout:
    if isinstance(layout, Grid):
        return CompositeLayout((layout,))
    return layout


@dataclass(frozen=True, eq=False)
class WaveFunction:
    layout: CompositeLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        layout = _as_layout(self.layout)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != layout.dim:
            raise ValueError(
                f"{amps.size} amplitudes do not fit layout of dimension {layout.dim}")
        amps.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.layout.measure))

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.layout, self.amplitudes / self.norm)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: CompositeLayout
    matrix: np.ndarray

    def __post_init__(self):
        layout = _as_layout(self.layout)
        mat = np.array(self.matrix, dtype=complex)
        if mat.shape != (layout.dim, layout.dim):
            raise ValueError(
                f"matrix shape {mat.shape} does not fit layout of dimension {layout.dim}")
        mat.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "matrix", mat)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)) * self.layout.measure)

    @property
    def density(self) -> np.ndarray:
        """Diagonal ``f(a) = rho(a, a)`` (real part)."""
        return self.matrix.diagonal().real.copy()

    def __mul__(self, c):
        return DensityMatrix(self.layout, self.matrix * c)

    __rmul__ = __mul__


def pure_projector(psi: WaveFunction, tol: float = NORM_TOL) -> DensityMatrix:
    """``rho(a, a') = psi(a) * conj(psi(a'))``."""
    if abs(psi.norm - 1.0) > tol:
        raise ValueError(f"wave function not normalized (norm = {psi.norm!r})")
    a = psi.amplitudes
    return DensityMatrix(psi.layout, np.outer(a, a.conj()))


def tensor_product(parts: Sequence[DensityMatrix]) -> DensityMatrix:
    if not parts:
        raise ValueError("tensor_product needs at least one factor")
    factors = tuple(g for p in parts for g in p.layout.factors)
    mat = reduce(np.kron, [p.matrix for p in parts])
    return DensityMatrix(CompositeLayout(factors), mat)


def tensor_wavefunctions(parts: Sequence[WaveFunction]) -> WaveFunction:
    if not parts:
        raise ValueError("tensor product needs at least one factor")
    factors = tuple(g for p in parts for g in p.layout.factors)
    amps = reduce(np.kron, [p.amplitudes for p in parts])
    return WaveFunction(CompositeLayout(factors), amps)


def _check_keep(keep, n_factors: int) -> tuple[int, ...]:
    keep = tuple(sorted({int(k) for k in keep}))
    if not keep:
        raise ValueError("keep set must be nonempty")
    for k in keep:
        if not 0 <= k < n_factors:
            raise IndexError(f"subsystem {k} out of range for {n_factors} factors")
    return keep


def partial_trace_matrix(matrix: np.ndarray, dims: Sequence[int],
                         keep: Sequence[int], weight: float) -> np.ndarray:
    """Array-level partial trace; ``weight`` is the measure of the traced factors.

    ``keep`` must already be sorted and validated.
    """
    dims = tuple(dims)
    traced = tuple(i for i in range(len(dims)) if i not in keep)
    if not traced:
        return matrix
    if len(keep) == 1:
        k = keep[0]
        pre = int(np.prod(dims[:k]))
        post = int(np.prod(dims[k + 1:]))
        m6 = matrix.reshape(pre, dims[k], post, pre, dims[k], post)
        return _accel.factor_marginal(m6) * weight
    nk = int(np.prod([dims[i] for i in keep]))
    nt = int(np.prod([dims[i] for i in traced]))
    order = tuple(keep) + traced
    if order == tuple(range(len(dims))):
        m4 = matrix.reshape(nk, nt, nk, nt)
    else:
        t = matrix.reshape(dims + dims)
        perm = order + tuple(len(dims) + i for i in order)
        m4 = np.ascontiguousarray(t.transpose(perm)).reshape(nk, nt, nk, nt)
    return _accel.partial_trace(m4) * weight


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Integrate out every factor not listed in ``keep``.

    Kept factors appear in ascending order in the result.
    """
    layout = rho.layout
    keep = _check_keep(keep, len(layout))
    if len(keep) == len(layout):
        return rho
    weight = float(np.prod([g.spacing for i, g in enumerate(layout.factors)
                            if i not in keep]))
    mat = partial_trace_matrix(rho.matrix, layout.dims, keep, weight)
    return DensityMatrix(layout.sub(keep), mat)


def pure_marginal(amplitudes: np.ndarray, dims: Sequence[int], axis: int,
                  weight: float) -> np.ndarray:
    """Single-factor reduced matrix of a pure joint state without forming ``|Psi><Psi|``."""
    t = np.moveaxis(np.asarray(amplitudes).reshape(tuple(dims)), axis, 0)
    m = t.reshape(t.shape[0], -1)
    return (m @ m.conj().T) * weight


def _restrict(diff: np.ndarray, part: str) -> np.ndarray:
    if part == "full":
        return diff
    if part == "diagonal":
        return np.diag(diff.diagonal())
    if part == "off_diagonal":
        out = diff.copy()
        np.fill_diagonal(out, 0.0)
        return out
    raise ValueError(f"unknown restriction {part!r}")


def matrix_distance(a: np.ndarray, b: np.ndarray, measure: float,
                    metric: str = "frobenius", part: str = "full") -> float:
    d = _restrict(a - b, part)
    if metric == "frobenius":
        return float(np.sqrt(np.sum(np.abs(d) ** 2)) * measure)
    if metric == "trace_norm":
        return float(np.sum(np.linalg.svd(d, compute_uv=False)) * measure)
    raise ValueError(f"unknown metric {metric!r}")


def distance(rho: DensityMatrix, sigma: DensityMatrix, metric: str = "frobenius",
             part: str = "full") -> float:
    """Measure-weighted distance between two states on the same layout.

    ``part`` restricts the comparison to the ``"diagonal"`` (probability
    density) or ``"off_diagonal"`` entries.
    """
    if rho.layout != sigma.layout:
        raise ValueError("distance between states on different layouts")
    return matrix_distance(rho.matrix, sigma.matrix, rho.layout.measure, metric, part)


@dataclass(frozen=True)
class Diagnostics:
    trace_error: float
    hermiticity_residual: float
    min_eigenvalue: float
    purity: float
    spectrum: np.ndarray = field(repr=False, compare=False)


def diagnostics(rho: DensityMatrix) -> Diagnostics:
    """Trace, Hermiticity, positivity and purity monitors.

    Eigenvalues are those of ``rho * measure`` so that they are occupation
    probabilities; the spectrum is returned in ascending order.
    """
    mu = rho.layout.measure
    m = rho.matrix
    herm = float(np.max(np.abs(m - m.conj().T)) * mu)
    evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T) * mu)
    return Diagnostics(
        trace_error=abs(rho.trace - 1.0),
        hermiticity_residual=herm,
        min_eigenvalue=float(evals[0]),
        purity=float(np.real(np.vdot(m.conj().T, m)) * mu ** 2),
        spectrum=evals,
    )


def maximally_mixed(layout) -> DensityMatrix:
    layout = _as_layout(layout)
    d = layout.dim
    return DensityMatrix(layout, np.eye(d) / (d * layout.measure))
