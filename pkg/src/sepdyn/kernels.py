"""One-particle Hamiltonian kernels ``H(rho)`` and the nonlinearity catalogue.

Every nonlinear term here is diagonal in position and is written as a
function of a few local quantities of the state (see :class:`DensityMoments`):

* ``f(x) = rho(x, x)``
* ``u_m(x) = [D^m rho](x, x)``, the derivative taken on the first index, which
  for ``rho = psi psi*`` equals ``conj(psi) * d^m psi``
* derivatives of ``f``

The same term functions are fed either moments of a reduced density matrix
(the separable N-particle construction) or pointwise moments of a joint wave
function (:class:`PointwiseMoments`, used only by the naive extension).
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .lattice import Grid, derivative_operator
from .states import DensityMatrix

logger = logging.getLogger(__name__)

DEFAULT_EPS_REL = 1e-12


class FloorMonitor:
    """Counts grid points where a denominator was lifted to the floor."""

    def __init__(self):
        self.counts: Counter = Counter()

    def record(self, label: str, n: int):
        if n:
            self.counts[label] += int(n)
            logger.debug("floor active at %d points in %s", n, label)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)


class _Floor:
    def __init__(self, eps_rel: float, monitor: FloorMonitor | None):
        self.eps_rel = eps_rel
        self.monitor = monitor

    def _note(self, label, n):
        if self.monitor is not None:
            self.monitor.record(label, n)

    def positive(self, f: np.ndarray, label: str) -> np.ndarray:
        """``max(f, eps_rel * max(f))``."""
        lo = self.eps_rel * float(np.max(f))
        if lo <= 0.0:
            lo = np.finfo(float).tiny
        mask = f < lo
        self._note(label, np.count_nonzero(mask))
        return np.where(mask, lo, f)

    def signed(self, d: np.ndarray, scale: float, label: str) -> np.ndarray:
        """Keep ``|d| >= eps_rel * scale`` while preserving the sign of ``d``."""
        lo = self.eps_rel * scale
        if lo <= 0.0:
            lo = np.finfo(float).tiny
        mask = np.abs(d) < lo
        self._note(label, np.count_nonzero(mask))
        return np.where(mask, np.where(d < 0, -lo, lo), d)


class Derivatives:
    """First/second derivative matrices of one grid and their powers."""

    def __init__(self, grid: Grid, scheme: str):
        self.grid = grid
        self.scheme = scheme
        self.first = derivative_operator(grid, 1, scheme)
        self.second = derivative_operator(grid, 2, scheme)
        self._powers = {0: np.eye(grid.n_points), 1: self.first, 2: self.second}

    def power(self, m: int) -> np.ndarray:
        """``second**(m // 2) @ first**(m % 2)``."""
        if m < 0:
            raise ValueError("derivative order must be non-negative")
        if m not in self._powers:
            self._powers[m] = self.second @ self.power(m - 2)
        return self._powers[m]


@lru_cache(maxsize=None)
def derivatives(grid: Grid, scheme: str = "spectral") -> Derivatives:
    return Derivatives(grid, scheme)


def _along(mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Apply ``mat`` to ``arr`` along ``axis``."""
    shape = arr.shape
    pre = int(np.prod(shape[:axis]))
    post = int(np.prod(shape[axis + 1:]))
    if np.iscomplexobj(arr) and not np.iscomplexobj(mat):
        # real operator: one real GEMM on the interleaved (re, im) view
        a = np.ascontiguousarray(arr).view(np.float64).reshape(pre, shape[axis], 2 * post)
        return np.matmul(mat, a).view(np.complex128).reshape(shape)
    out = np.matmul(mat, arr.reshape(pre, shape[axis], post))
    return out.reshape(shape)


class DensityMoments:
    """Local quantities of a 1-particle density matrix (continuum-kernel samples)."""

    axis = 0

    def __init__(self, rho: np.ndarray, ops: Derivatives):
        self.rho = rho
        self.ops = ops
        self.density = rho.diagonal().real.copy()
        self._mixed: dict[int, np.ndarray] = {}
        self._dens: dict[int, np.ndarray] = {}

    def broadcast(self, values: np.ndarray) -> np.ndarray:
        return values

    def mixed(self, m: int) -> np.ndarray:
        if m not in self._mixed:
            if m == 0:
                self._mixed[0] = self.rho.diagonal().copy()
            else:
                dm = self.ops.power(m)
                self._mixed[m] = np.einsum("xy,yx->x", dm, self.rho)
        return self._mixed[m]

    @property
    def current(self) -> np.ndarray:
        return self.mixed(1).imag

    def density_derivative(self, m: int) -> np.ndarray:
        if m not in self._dens:
            self._dens[m] = self.ops.power(m) @ self.density
        return self._dens[m]


class PointwiseMoments(DensityMoments):
    """Moments of a joint wave function taken pointwise along one coordinate.

    ``f = |Psi|^2`` and ``u_m = conj(Psi) * d^m Psi / dx_axis^m`` on the full
    joint grid, i.e. the 1-particle pure-state expressions transplanted to
    joint coordinates without any integration over the other particles.
    """

    def __init__(self, psi: np.ndarray, axis: int, ops: Derivatives):
        self.psi = psi
        self.axis = axis
        self.ops = ops
        self.density = np.abs(psi) ** 2
        self._mixed = {}
        self._dens = {}

    def broadcast(self, values: np.ndarray) -> np.ndarray:
        shape = [1] * self.psi.ndim
        shape[self.axis] = -1
        return np.asarray(values).reshape(shape)

    def mixed(self, m: int) -> np.ndarray:
        if m not in self._mixed:
            if m == 0:
                self._mixed[0] = self.density.astype(complex)
            else:
                d = _along(self.ops.power(m), self.psi, self.axis)
                self._mixed[m] = self.psi.conj() * d
        return self._mixed[m]

    def density_derivative(self, m: int) -> np.ndarray:
        if m not in self._dens:
            self._dens[m] = _along(self.ops.power(m), self.density, self.axis)
        return self._dens[m]


class Term(NamedTuple):
    label: str
    func: Callable  # (moments, floor) -> real array shaped like moments.density


@dataclass(frozen=True, eq=False)
class NonlinearKernel:
    """``rho -> H(rho)`` on one grid.

    ``dense`` and ``potential`` do not depend on the state; ``terms`` are the
    state-dependent diagonal contributions. All matrices act on sample vectors.
    """

    grid: Grid
    dense: np.ndarray | None = None
    potential: np.ndarray | None = None
    terms: tuple[Term, ...] = ()
    scheme: str = "spectral"
    eps_rel: float = DEFAULT_EPS_REL
    name: str = "kernel"

    @property
    def is_linear(self) -> bool:
        return not self.terms

    def ops(self) -> Derivatives:
        return derivatives(self.grid, self.scheme)

    def moments(self, rho: np.ndarray) -> DensityMoments:
        return DensityMoments(rho, self.ops())

    def pointwise_moments(self, psi: np.ndarray, axis: int) -> PointwiseMoments:
        return PointwiseMoments(psi, axis, self.ops())

    def nonlinear_diagonal(self, moments: DensityMoments,
                           monitor: FloorMonitor | None = None) -> np.ndarray | None:
        if not self.terms:
            return None
        floor = _Floor(self.eps_rel, monitor)
        total = np.zeros(moments.density.shape)
        for term in self.terms:
            total += term.func(moments, floor)
        return total

    def local_diagonal(self, rho: np.ndarray,
                       monitor: FloorMonitor | None = None) -> np.ndarray | None:
        """Potential plus state-dependent diagonal for a 1-particle ``rho`` array."""
        diag = None if self.potential is None else self.potential.copy()
        if self.terms:
            nl = self.nonlinear_diagonal(self.moments(rho), monitor)
            diag = nl if diag is None else diag + nl
        return diag

    def __call__(self, rho, monitor: FloorMonitor | None = None) -> np.ndarray:
        mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        n = self.grid.n_points
        if mat.shape != (n, n):
            raise ValueError(f"kernel on {n} points got matrix of shape {mat.shape}")
        out = np.zeros((n, n), dtype=complex)
        if self.dense is not None:
            out += self.dense
        diag = self.local_diagonal(mat, monitor)
        if diag is not None:
            out[np.diag_indices(n)] += diag
        return out


# --------------------------------------------------------------------------
# linear pieces
# --------------------------------------------------------------------------

def kinetic_kernel(grid: Grid, mass: float = 1.0, hbar: float = 1.0,
                   scheme: str = "spectral") -> NonlinearKernel:
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    lap = derivative_operator(grid, 2, scheme)
    return NonlinearKernel(grid, dense=-(hbar ** 2) / (2 * mass) * lap,
                           scheme=scheme, name="kinetic")


def _real_profile(grid: Grid, values, what: str) -> np.ndarray:
    if callable(values):
        values = values(grid.points)
    arr = np.asarray(values)
    if np.iscomplexobj(arr):
        if np.any(arr.imag != 0):
            raise ValueError(f"{what} must be real-valued")
        arr = arr.real
    arr = np.broadcast_to(arr.astype(float), (grid.n_points,)).copy()
    return arr


def potential_kernel(grid: Grid, V) -> NonlinearKernel:
    """Multiplication by a real potential ``V(x)`` (array, scalar or callable)."""
    return NonlinearKernel(grid, potential=_real_profile(grid, V, "potential"),
                           name="potential")


def harmonic_potential(grid: Grid, omega: float, center: float | None = None,
                       mass: float = 1.0) -> np.ndarray:
    c = grid.length / 2 if center is None else center
    return 0.5 * mass * omega ** 2 * (grid.points - c) ** 2


# --------------------------------------------------------------------------
# state-dependent terms
# --------------------------------------------------------------------------

def current_density(rho, grid: Grid | None = None, scheme: str = "spectral") -> np.ndarray:
    """``j(x) = Im [D rho](x, x)``; for a pure state ``Im(conj(psi) D psi)``."""
    if isinstance(rho, DensityMatrix):
        grid = grid or rho.layout.factors[0]
        rho = rho.matrix
    return DensityMoments(np.asarray(rho), derivatives(grid, scheme)).current


def _hb_term(A):
    def term(mom, floor):
        f = floor.positive(mom.density, "haag_bannier")
        return mom.broadcast(A) * mom.current / f
    return term


def haag_bannier_kernel(grid: Grid, A=1.0, scheme: str = "spectral",
                        eps_rel: float = DEFAULT_EPS_REL) -> NonlinearKernel:
    """Diagonal ``A(x) j(x) / f(x)``: invariant under ``rho -> c rho``."""
    A = _real_profile(grid, A, "A")
    return NonlinearKernel(grid, terms=(Term("haag_bannier", _hb_term(A)),),
                           scheme=scheme, eps_rel=eps_rel, name="haag_bannier")


def nls_kernel(grid: Grid, g: float, scheme: str = "spectral") -> NonlinearKernel:
    """Cubic term ``g f(x)``."""
    g = float(g)

    def term(mom, floor):
        return g * mom.density
    return NonlinearKernel(grid, terms=(Term("nls", term),), scheme=scheme, name="nls")


def bbm_kernel(grid: Grid, b: float, scheme: str = "spectral",
               eps_rel: float = DEFAULT_EPS_REL) -> NonlinearKernel:
    """Logarithmic term ``b ln f(x)``."""
    b = float(b)

    def term(mom, floor):
        return b * np.log(floor.positive(mom.density, "bbm"))
    return NonlinearKernel(grid, terms=(Term("bbm", term),), scheme=scheme,
                           eps_rel=eps_rel, name="bbm")


def doebner_goldin_functionals(mom: DensityMoments, floor: _Floor) -> tuple[np.ndarray, ...]:
    """The five real functionals ``R1..R5`` evaluated on local moments."""
    f = floor.positive(mom.density, "doebner_goldin")
    j = mom.current
    df = mom.density_derivative(1)
    r1 = mom.mixed(2).imag / f
    r2 = mom.density_derivative(2) / f
    r3 = (j / f) ** 2
    r4 = j * df / f ** 2
    r5 = (df / f) ** 2
    return r1, r2, r3, r4, r5


def doebner_goldin_kernel(grid: Grid, coefficients: Sequence[float],
                          scheme: str = "spectral",
                          eps_rel: float = DEFAULT_EPS_REL) -> NonlinearKernel:
    """Real combination ``sum_j c_j R_j`` of the non-dissipative functionals."""
    c = np.asarray(coefficients, dtype=float)
    if c.shape != (5,):
        raise ValueError("doebner_goldin needs exactly five coefficients")

    def term(mom, floor):
        rs = doebner_goldin_functionals(mom, floor)
        out = np.zeros(mom.density.shape)
        for cj, rj in zip(c, rs):
            if cj != 0.0:
                out += cj * rj
        return out
    return NonlinearKernel(grid, terms=(Term("doebner_goldin", term),),
                           scheme=scheme, eps_rel=eps_rel, name="doebner_goldin")


def twarock_kernel(grid: Grid, coupling: float = 1.0, scheme: str = "spectral",
                   eps_rel: float = DEFAULT_EPS_REL) -> NonlinearKernel:
    """``(psi'' conj(psi') - c.c.) / (psi conj(psi') - c.c.)`` in density-matrix form.

    Multiplying numerator and denominator by ``|psi|^2`` gives
    ``-Im(u2 * conj(u1)) / (f * j)``, which only involves first-index
    derivatives of ``rho``. The denominator vanishes for real states.
    """
    if not grid.periodic:
        raise ValueError("the Twarock term is defined on a periodic grid")
    coupling = float(coupling)

    def term(mom, floor):
        u1 = mom.mixed(1)
        num = -(mom.mixed(2) * u1.conj()).imag
        den = mom.density * u1.imag
        scale = float(np.max(mom.density)) * float(np.max(np.abs(u1)))
        return coupling * num / floor.signed(den, scale, "twarock")
    return NonlinearKernel(grid, terms=(Term("twarock", term),), scheme=scheme,
                           eps_rel=eps_rel, name="twarock")


def homogeneous_kernel(grid: Grid, F: Callable, orders: Sequence[int], n: int,
                       scheme: str = "spectral", eps_rel: float = DEFAULT_EPS_REL,
                       imag_tol: float = 1e-10) -> NonlinearKernel:
    """Term ``F(u_{m1}, u_{m2}, ...) / f^n`` with ``u_m = [D^m rho](x, x)``.

    ``F`` must be real and satisfy ``F(c u) = c^n F(u)`` for ``c > 0``, so that
    the numerator evaluated on ``conj(psi) d^m psi`` has the same (n, n)
    homogeneity in ``psi`` as ``|psi|^{2n}`` and the term is invariant under
    ``psi -> lambda psi``.
    """
    orders = tuple(int(m) for m in orders)
    if n < 1:
        raise ValueError("homogeneity degree n must be a positive integer")

    def term(mom, floor):
        val = np.asarray(F(*[mom.mixed(m) for m in orders]))
        if np.iscomplexobj(val):
            scale = 1.0 + float(np.max(np.abs(val.real), initial=0.0))
            if np.max(np.abs(val.imag), initial=0.0) > imag_tol * scale:
                raise ValueError("homogeneous functional returned non-real values")
            val = val.real
        f = floor.positive(mom.density, "homogeneous")
        return val / f ** n
    return NonlinearKernel(grid, terms=(Term("homogeneous", term),), scheme=scheme,
                           eps_rel=eps_rel, name="homogeneous")


def compose_kernels(parts: Sequence[NonlinearKernel], grid: Grid | None = None) -> NonlinearKernel:
    """Pointwise sum of kernels on one grid; the empty sum is the zero kernel."""
    parts = list(parts)
    if not parts:
        if grid is None:
            raise ValueError("an empty composition needs an explicit grid")
        return NonlinearKernel(grid, name="zero")
    grid = grid or parts[0].grid
    if any(p.grid != grid for p in parts):
        raise ValueError("cannot compose kernels defined on different grids")
    schemes = {p.scheme for p in parts if p.terms}
    if len(schemes) > 1:
        raise ValueError(f"nonlinear terms use mixed derivative schemes {schemes}")
    scheme = schemes.pop() if schemes else parts[0].scheme
    eps = {p.eps_rel for p in parts if p.terms}
    if len(eps) > 1:
        raise ValueError("nonlinear terms use different floor settings")
    dense = [p.dense for p in parts if p.dense is not None]
    pot = [p.potential for p in parts if p.potential is not None]
    return NonlinearKernel(
        grid,
        dense=sum(dense[1:], dense[0].copy()) if dense else None,
        potential=sum(pot[1:], pot[0].copy()) if pot else None,
        terms=tuple(t for p in parts for t in p.terms),
        scheme=scheme,
        eps_rel=eps.pop() if eps else DEFAULT_EPS_REL,
        name="+".join(p.name for p in parts),
    )
