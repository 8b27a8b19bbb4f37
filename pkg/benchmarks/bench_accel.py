"""Time the numba and numpy paths of the hot kernels side by side.

    python benchmarks/bench_accel.py [--n 16] [--repeat 50] [--steps 200]

Reports per-call times of each kernel in ``sepdyn._accel`` on arrays of the
sizes the two-particle runs use, then the full commutator right-hand side and
a short RK4 run. Both paths are also checked to agree.
"""
import argparse
import time

import numpy as np

from sepdyn import _accel
from sepdyn.dynamics import IntegratorConfig, evolve, lvn_rhs
from sepdyn.harness import GridConfig, build_extension, build_initial_state, reference_experiment


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n: int, rng):
    d = n * n
    c = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    k = [rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)) for _ in range(4)]
    w = rng.standard_normal(d)
    m6 = c.reshape(1, n, n, 1, n, n)
    m4 = c.reshape(n, n, n, n)
    return {
        "partial_trace": lambda impl: impl.partial_trace(m4),
        "factor_marginal": lambda impl: impl.factor_marginal(m6),
        "antihermitian_rhs": lambda impl: impl.antihermitian_rhs(c, 1.0),
        "add_row_scaled": lambda impl: impl.add_row_scaled(np.zeros_like(c), w, c),
        "axpy": lambda impl: impl.axpy(c, 0.5, k[0]),
        "rk4_combine": lambda impl: impl.rk4_combine(c, *k, 1e-3),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16, help="points per particle")
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--steps", type=int, default=200, help="RK4 steps in the end-to-end timing")
    args = ap.parse_args()
    if _accel.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"joint dimension {args.n ** 2}, best of {args.repeat}")
    print(f"{'kernel':<20}{'numpy [us]':>12}{'numba [us]':>12}{'speedup':>9}")
    for name, fn in kernel_cases(args.n, rng).items():
        a, b = fn(_accel.numpy_impl), fn(_accel.numba_impl)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        t_np = best_of(lambda: fn(_accel.numpy_impl), args.repeat)
        t_nb = best_of(lambda: fn(_accel.numba_impl), args.repeat)
        print(f"{name:<20}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.2f}")

    spec = reference_experiment("complete_separability", grid=GridConfig(args.n, 8.0))
    ext = build_extension(spec)
    rho = build_initial_state(spec)
    cfg = IntegratorConfig(1e-3, args.steps * 1e-3, observer_stride=args.steps)
    results = {}
    for backend in ("numpy", "numba"):
        prev = _accel.select(backend)
        try:
            t_rhs = best_of(lambda: lvn_rhs(rho, ext), args.repeat)
            t0 = time.perf_counter()
            traj = evolve(rho, ext, cfg, store_snapshots=False)
            t_run = time.perf_counter() - t0
            results[backend] = (t_rhs, t_run, traj.final.matrix)
        finally:
            _accel.select(prev)
    diff = np.max(np.abs(results["numpy"][2] - results["numba"][2]))
    print(f"{'lvn_rhs':<20}{results['numpy'][0] * 1e6:>12.1f}{results['numba'][0] * 1e6:>12.1f}"
          f"{results['numpy'][0] / results['numba'][0]:>9.2f}")
    print(f"{f'{args.steps} RK4 steps [s]':<20}{results['numpy'][1]:>12.3f}{results['numba'][1]:>12.3f}"
          f"{results['numpy'][1] / results['numba'][1]:>9.2f}")
    print(f"max |numpy - numba| after the run: {diff:.2e}")


if __name__ == "__main__":
    main()
