"""Time evolution: the nonlinear commutator flow and its pure-state counterpart."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import _accel
from .extension import (ExtensionSpec, extended_operator, extended_operator_pure,
                        naive_operator)
from .kernels import FloorMonitor
from .states import DensityMatrix, WaveFunction, diagnostics

logger = logging.getLogger(__name__)

SCHEMES = ("rk4", "rk4_step_doubling")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_final: float
    scheme: str = "rk4"
    error_tolerance: float = 1e-10
    observer_stride: int = 1
    dt_min: float = 1e-9

    def __post_init__(self):
        if not (self.dt > 0 and self.t_final > 0):
            raise ValueError("dt and t_final must be positive")
        if self.dt > self.t_final:
            raise ValueError(f"dt = {self.dt} exceeds t_final = {self.t_final}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown integration scheme {self.scheme!r}")
        if self.error_tolerance <= 0:
            raise ValueError("error tolerance must be positive")
        if int(self.observer_stride) != self.observer_stride or self.observer_stride < 1:
            raise ValueError("observer_stride must be a positive integer")
        if not 0 < self.dt_min <= self.dt:
            raise ValueError("dt_min must lie in (0, dt]")


class NonFiniteStateError(FloatingPointError):
    """Raised when the state picks up NaN/Inf; keeps the last finite trajectory."""

    def __init__(self, time: float, trajectory: "Trajectory"):
        super().__init__(f"non-finite state first seen at t = {time!r}")
        self.time = time
        self.trajectory = trajectory


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass
class Trajectory:
    kind: str  # "density" or "wavefunction"
    layout: object
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)
    observations: dict = field(default_factory=dict)
    floor_counts: list = field(default_factory=list)
    steps: int = 0
    rejected_steps: int = 0
    last: object = None  # final state, kept even when snapshots are not stored

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.monitors[name])

    @property
    def final(self):
        return self.last


def lvn_rhs(rho, spec: ExtensionSpec, hbar: float = 1.0,
            monitor: FloorMonitor | None = None) -> np.ndarray:
    """``(H(rho) rho - rho H(rho)) / (i hbar)`` for Hermitian ``rho``.

    ``rho H`` is obtained as ``(H rho)^dagger``, which holds for Hermitian
    ``H`` and ``rho`` and makes the result Hermitian to the last bit.
    """
    if spec.mode != "correct":
        raise ValueError("the naive recipe is defined for pure states only")
    mat = rho.matrix if isinstance(rho, DensityMatrix) else rho
    op = extended_operator(mat, spec, monitor)
    return _accel.antihermitian_rhs(op.apply(mat), hbar)


def schrodinger_rhs(psi, spec: ExtensionSpec, hbar: float = 1.0,
                    monitor: FloorMonitor | None = None) -> np.ndarray:
    """``H(rho_psi) psi / (i hbar)`` with ``H`` built by the extension's recipe."""
    amps = psi.amplitudes if isinstance(psi, WaveFunction) else psi
    if spec.mode == "naive":
        op = naive_operator(amps, spec, monitor)
    else:
        op = extended_operator_pure(amps, spec, monitor)
    return op.apply(amps) * (-1j / hbar)


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(_accel.axpy(y, 0.5 * dt, k1))
    k3 = f(_accel.axpy(y, 0.5 * dt, k2))
    k4 = f(_accel.axpy(y, dt, k3))
    return _accel.rk4_combine(y, k1, k2, k3, k4, dt)


def _record(traj: Trajectory, t: float, y: np.ndarray, monitor: FloorMonitor,
            observers: Mapping[str, Callable], store: bool):
    traj.times.append(t)
    traj.floor_counts.append(monitor.snapshot())
    mon = traj.monitors
    mon.setdefault("floor_activations", []).append(monitor.total)
    if traj.kind == "density":
        state = DensityMatrix(traj.layout, y)
        d = diagnostics(state)
        mon.setdefault("trace_error", []).append(d.trace_error)
        mon.setdefault("purity", []).append(d.purity)
        mon.setdefault("hermiticity_residual", []).append(d.hermiticity_residual)
        mon.setdefault("min_eigenvalue", []).append(d.min_eigenvalue)
        mon.setdefault("spectrum", []).append(d.spectrum)
    else:
        state = WaveFunction(traj.layout, y)
        mon.setdefault("norm_error", []).append(abs(state.norm - 1.0))
    traj.last = state
    if store:
        traj.snapshots.append(state)
    for name, obs in observers.items():
        traj.observations.setdefault(name, []).append(obs(state))


def _error_norm(kind: str, diff: np.ndarray, measure: float) -> float:
    if kind == "density":
        return float(np.linalg.norm(diff)) * measure
    return float(np.linalg.norm(diff)) * math.sqrt(measure)


def evolve(state, spec: ExtensionSpec, cfg: IntegratorConfig, hbar: float = 1.0,
           observers: Mapping[str, Callable] | None = None,
           store_snapshots: bool = True) -> Trajectory:
    """Integrate a density matrix (commutator flow) or a wave function.

    Monitors are recorded at t = 0, every ``observer_stride`` steps and at
    ``t_final``; with step doubling, at multiples of ``observer_stride * dt``. Nothing is renormalized or projected during the run.
    ``observers`` map names to callables evaluated on each recorded state;
    their results land in ``Trajectory.observations``.
    """
    observers = dict(observers or {})
    if isinstance(state, DensityMatrix):
        kind, y = "density", state.matrix.copy()
        rhs_fn = lvn_rhs
    elif isinstance(state, WaveFunction):
        kind, y = "wavefunction", state.amplitudes.copy()
        rhs_fn = schrodinger_rhs
    else:
        raise TypeError("evolve expects a DensityMatrix or a WaveFunction")
    if state.layout != spec.layout:
        raise ValueError("state layout does not match the extension layout")
    if kind == "density" and spec.mode != "correct":
        raise ValueError("the naive recipe is defined for pure states only")

    monitor = FloorMonitor()
    traj = Trajectory(kind, state.layout)

    def f(z):
        return rhs_fn(z, spec, hbar, monitor)

    _record(traj, 0.0, y, monitor, observers, store_snapshots)
    stride = int(cfg.observer_stride)
    T = cfg.t_final

    def check(z, t):
        if not np.all(np.isfinite(z)):
            raise NonFiniteStateError(t, traj)

    if cfg.scheme == "rk4":
        n_steps = max(1, math.ceil(T / cfg.dt - 1e-9))
        for i in range(1, n_steps + 1):
            t_prev = (i - 1) * cfg.dt
            h = cfg.dt if i < n_steps else T - t_prev
            y = rk4_step(f, y, h)
            t = i * cfg.dt if i < n_steps else T
            check(y, t)
            traj.steps = i
            if i % stride == 0 or i == n_steps:
                _record(traj, t, y, monitor, observers, store_snapshots)
        return traj

    # adaptive runs record on the fixed time grid k * stride * dt, so runs that
    # take different step sequences still report at the same times
    mu = state.layout.measure
    interval = stride * cfg.dt
    eps = 1e-12 * T
    t, h, accepted, k_obs = 0.0, cfg.dt, 0, 1
    while T - t > eps:
        t_obs = min(k_obs * interval, T)
        h_try = min(h, t_obs - t)
        big = rk4_step(f, y, h_try)
        half = rk4_step(f, rk4_step(f, y, 0.5 * h_try), 0.5 * h_try)
        check(half, t + h_try)
        err = _error_norm(kind, half - big, mu) / 15.0
        if err <= cfg.error_tolerance:
            y, t = half, t + h_try
            accepted += 1
            traj.steps = accepted
            if t_obs - t <= eps:
                t = t_obs
                k_obs += 1
                _record(traj, t, y, monitor, observers, store_snapshots)
            if err < cfg.error_tolerance / 64:
                h = min(2 * h, cfg.dt)
        else:
            traj.rejected_steps += 1
            h = 0.5 * h_try
            if h < cfg.dt_min:
                logger.error("step size underflow at t = %g (h = %g)", t, h)
                raise StepSizeUnderflow(f"step size fell below dt_min = {cfg.dt_min} at t = {t}")
    return traj
