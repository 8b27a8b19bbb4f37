"""Uniform 1-D grids, quadrature and discrete derivative matrices.

Operators produced here are plain ``numpy`` matrices that act on vectors of
grid samples, i.e. a continuum kernel ``K(x, y)`` is stored as ``K(x_i, y_j) * dx``.
With that convention ``op @ rho`` realizes ``int dy K(x, y) rho(y, x')`` and the
Dirac delta is the identity matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SCHEMES = ("spectral", "central_difference")


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``x_j = j * spacing`` for ``j = 0 .. n_points - 1``."""

    n_points: int
    length: float
    periodic: bool = True

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 4:
            raise ValueError(f"grid needs n_points >= 4, got {self.n_points}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"grid length must be positive, got {self.length}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @cached_property
    def points(self) -> np.ndarray:
        x = np.arange(self.n_points) * self.spacing
        x.flags.writeable = False
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """FFT-ordered angular wavenumbers ``2 pi m / length``."""
        k = 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)
        k.flags.writeable = False
        return k

    @property
    def nyquist(self) -> float:
        return np.pi / self.spacing


def make_grid(n_points: int, length: float, periodic: bool = True) -> Grid:
    return Grid(n_points, length, periodic)


def integrate(grid: Grid, samples) -> complex | float:
    """Riemann sum ``sum_j f(x_j) * spacing``."""
    samples = np.asarray(samples)
    if samples.shape != (grid.n_points,):
        raise ValueError(
            f"expected {grid.n_points} samples, got shape {samples.shape}")
    return samples.sum() * grid.spacing


def derivative_operator(grid: Grid, order: int,
                        scheme: str = "spectral") -> np.ndarray:
    """Real matrix of the first or second derivative on ``grid``.

    Parameters
    ----------
    grid : Grid
    order : {1, 2}
    scheme : {"spectral", "central_difference"}
        The spectral scheme needs a periodic grid. For even ``n_points`` the
        Nyquist mode is dropped from the first derivative (its symbol is not
        real), while the second derivative keeps ``-k_nyq**2``.

    Returns
    -------
    numpy.ndarray
        ``(n, n)`` float matrix; antisymmetric for ``order=1`` and symmetric
        for ``order=2`` on periodic grids.
    """
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "spectral":
        if not grid.periodic:
            raise ValueError("spectral differentiation requires a periodic grid")
        return _spectral(grid, order)
    return _central(grid, order)


def _spectral(grid: Grid, order: int) -> np.ndarray:
    n = grid.n_points
    k = grid.wavenumbers.copy()
    if order == 1:
        symbol = 1j * k
        if n % 2 == 0:
            symbol[n // 2] = 0.0
    else:
        symbol = -(k ** 2)
    eye = np.eye(n)
    mat = np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0).real
    if order == 1:
        mat = 0.5 * (mat - mat.T)
    else:
        mat = 0.5 * (mat + mat.T)
    return mat


def _central(grid: Grid, order: int) -> np.ndarray:
    n, h = grid.n_points, grid.spacing
    up = np.eye(n, k=1)
    down = np.eye(n, k=-1)
    if grid.periodic:
        up[n - 1, 0] = 1.0
        down[0, n - 1] = 1.0
    if order == 1:
        return (up - down) / (2 * h)
    return (up - 2 * np.eye(n) + down) / h ** 2
