"""Hot inner loops of the integrators.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy version
with identical semantics. The numba path is used when numba imports and the
environment variable ``SEPDYN_DISABLE_JIT`` is unset or ``0``; otherwise the
numpy path is bound. Both are always importable as ``numba_impl`` and
``numpy_impl`` so they can be benchmarked and cross-checked side by side.
"""
from __future__ import annotations

import os
import types

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _jit_disabled() -> bool:
    return os.environ.get("SEPDYN_DISABLE_JIT", "0").lower() not in ("", "0", "false", "no")


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def _np_partial_trace(m4):
    # m4 has shape (keep, traced, keep, traced)
    return np.einsum("ajbj->ab", m4)


def _np_factor_marginal(m6):
    # m6 has shape (pre, keep, post, pre, keep, post)
    return np.einsum("paqpbq->ab", m6)


def _np_antihermitian_rhs(c, hbar):
    # (C - C^H) / (i hbar); exactly Hermitian in floating point
    return (c - c.conj().T) * (-1j / hbar)


def _np_add_row_scaled(out, w, x):
    out += w[:, None] * x
    return out


def _np_axpy(y, a, k):
    return y + a * k


def _np_rk4_combine(y, k1, k2, k3, k4, dt):
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


numpy_impl = types.SimpleNamespace(
    partial_trace=_np_partial_trace,
    factor_marginal=_np_factor_marginal,
    antihermitian_rhs=_np_antihermitian_rhs,
    add_row_scaled=_np_add_row_scaled,
    axpy=_np_axpy,
    rk4_combine=_np_rk4_combine,
)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _nb_partial_trace(m4):
        nk, nt = m4.shape[0], m4.shape[1]
        out = np.zeros((nk, nk), dtype=m4.dtype)
        for a in range(nk):
            for b in range(nk):
                acc = 0.0 + 0.0j
                for j in range(nt):
                    acc += m4[a, j, b, j]
                out[a, b] = acc
        return out

    @njit(cache=True, nogil=True)
    def _nb_antihermitian_rhs(c, hbar):
        n = c.shape[0]
        cv = c.view(np.float64)
        out = np.empty((n, n), np.complex128)
        ov = out.view(np.float64)
        s = 1.0 / hbar
        bs = 32
        for ib in range(0, n, bs):
            for jb in range(ib, n, bs):
                for i in range(ib, min(ib + bs, n)):
                    j0 = i if jb == ib else jb
                    for j in range(j0, min(jb + bs, n)):
                        re = cv[i, 2 * j] - cv[j, 2 * i]
                        im = cv[i, 2 * j + 1] + cv[j, 2 * i + 1]
                        ov[i, 2 * j] = im * s
                        ov[i, 2 * j + 1] = -re * s
                        ov[j, 2 * i] = im * s
                        ov[j, 2 * i + 1] = re * s
        return out

    @njit(cache=True, nogil=True)
    def _nb_factor_marginal(m6):
        npre, nk, npost = m6.shape[0], m6.shape[1], m6.shape[2]
        out = np.zeros((nk, nk), dtype=m6.dtype)
        for p in range(npre):
            for a in range(nk):
                for b in range(nk):
                    acc = 0.0 + 0.0j
                    for q in range(npost):
                        acc += m6[p, a, q, p, b, q]
                    out[a, b] += acc
        return out

    @njit(cache=True, nogil=True)
    def _nb_add_row_scaled(out, w, x):
        n, m = x.shape
        for i in range(n):
            wi = w[i]
            for j in range(m):
                out[i, j] += wi * x[i, j]
        return out

    @njit(cache=True, nogil=True)
    def _nb_axpy(y, a, k):
        out = np.empty(y.shape, y.dtype)
        fy = y.ravel()
        fk = k.ravel()
        fo = out.ravel()
        for i in range(fy.size):
            fo[i] = fy[i] + a * fk[i]
        return out

    @njit(cache=True, nogil=True)
    def _nb_rk4_combine(y, k1, k2, k3, k4, dt):
        out = np.empty(y.shape, y.dtype)
        c = dt / 6.0
        fy, f1, f2, f3, f4 = y.ravel(), k1.ravel(), k2.ravel(), k3.ravel(), k4.ravel()
        fo = out.ravel()
        for i in range(fy.size):
            fo[i] = fy[i] + c * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i])
        return out

    numba_impl = types.SimpleNamespace(
        partial_trace=_nb_partial_trace,
        factor_marginal=_nb_factor_marginal,
        antihermitian_rhs=_nb_antihermitian_rhs,
        add_row_scaled=_nb_add_row_scaled,
        axpy=_nb_axpy,
        rk4_combine=_nb_rk4_combine,
    )
else:  # pragma: no cover
    numba_impl = None


USING_NUMBA = HAVE_NUMBA and not _jit_disabled()
_NAMES = ("partial_trace", "factor_marginal", "antihermitian_rhs", "add_row_scaled", "axpy",
          "rk4_combine")


def select(backend: str) -> str:
    """Rebind the module-level kernels to ``"numba"`` or ``"numpy"``; returns the previous name.

    Callers look kernels up through this module at call time, so the switch
    takes effect immediately. Meant for benchmarks and cross-checks.
    """
    global BACKEND, impl
    if backend == "numba" and numba_impl is None:
        raise RuntimeError("numba is not available")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    previous = BACKEND
    impl = numba_impl if backend == "numba" else numpy_impl
    g = globals()
    for name in _NAMES:
        g[name] = getattr(impl, name)
    BACKEND = backend
    return previous


BACKEND = "numba" if USING_NUMBA else "numpy"
impl = None
select(BACKEND)
