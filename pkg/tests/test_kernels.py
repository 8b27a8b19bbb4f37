import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepdyn.kernels import (FloorMonitor, bbm_kernel, compose_kernels, current_density,
                            doebner_goldin_kernel, haag_bannier_kernel, harmonic_potential,
                            homogeneous_kernel, kinetic_kernel, nls_kernel, potential_kernel,
                            twarock_kernel)
from sepdyn.lattice import derivative_operator, make_grid
from sepdyn.states import DensityMatrix, WaveFunction, pure_projector

G = make_grid(16, 8.0)
X = G.points


def plane_wave(m):
    k = 2 * np.pi * m / G.length
    return k, pure_projector(WaveFunction(G, np.exp(1j * k * X)).normalized())


def packet(k=0.7, width=1.0, center=4.0):
    a = np.exp(-((X - center) ** 2) / (2 * width ** 2)) * np.exp(1j * k * X)
    return WaveFunction(G, a).normalized()


def diag(h):
    off = h - np.diag(np.diag(h))
    assert np.max(np.abs(off)) == 0
    return np.real(np.diag(h))


@pytest.mark.parametrize("m", [1, 2, -3])
def test_plane_wave_values(m):
    k, rho = plane_wave(m)
    f = 1 / G.length
    np.testing.assert_allclose(current_density(rho), k * f, atol=1e-13)
    np.testing.assert_allclose(diag(haag_bannier_kernel(G, 0.8)(rho)), 0.8 * k, atol=1e-12)
    np.testing.assert_allclose(diag(nls_kernel(G, 1.5)(rho)), 1.5 * f, atol=1e-13)
    np.testing.assert_allclose(diag(bbm_kernel(G, 0.5)(rho)), 0.5 * np.log(f), atol=1e-12)
    np.testing.assert_allclose(diag(twarock_kernel(G, 0.3)(rho)), -0.3 * k ** 2, atol=1e-10)
    # only R3 = (j/f)^2 survives for a plane wave
    expect = [0.0, 0.0, k ** 2, 0.0, 0.0]
    for j in range(5):
        c = np.zeros(5)
        c[j] = 1.0
        np.testing.assert_allclose(diag(doebner_goldin_kernel(G, c)(rho)), expect[j], atol=1e-10)


def test_kinetic_kernel_on_plane_wave():
    k, rho = plane_wave(2)
    psi = np.exp(1j * k * X)
    h = kinetic_kernel(G, mass=2.0)(rho)
    np.testing.assert_allclose(h @ psi, k ** 2 / 4 * psi, atol=1e-12)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-13)
    with pytest.raises(ValueError):
        kinetic_kernel(G, mass=0.0)


def test_potential_kernel_forms():
    V = harmonic_potential(G, 0.5)
    assert V[np.argmin(np.abs(X - 4.0))] == 0
    rho = pure_projector(packet())
    np.testing.assert_array_equal(diag(potential_kernel(G, V)(rho)), V)
    np.testing.assert_array_equal(diag(potential_kernel(G, 2.0)(rho)), 2.0)
    np.testing.assert_array_equal(diag(potential_kernel(G, np.sin)(rho)), np.sin(X))
    with pytest.raises(ValueError):
        potential_kernel(G, 1j * np.ones(16))


def test_packet_matches_pure_state_formulas():
    psi = packet().amplitudes
    d1 = derivative_operator(G, 1) @ psi
    d2 = derivative_operator(G, 2) @ psi
    f = np.abs(psi) ** 2
    j = np.imag(psi.conj() * d1)
    # density derivatives act on f itself, not on psi
    df = derivative_operator(G, 1) @ f
    rho = pure_projector(packet())
    np.testing.assert_allclose(diag(haag_bannier_kernel(G, 1.0)(rho)), j / f, rtol=1e-9)
    r1 = np.imag(psi.conj() * d2) / f
    np.testing.assert_allclose(diag(doebner_goldin_kernel(G, [1, 0, 0, 0, 0])(rho)), r1,
                               rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(diag(doebner_goldin_kernel(G, [0, 0, 0, 0, 1])(rho)), (df / f) ** 2,
                               rtol=1e-8, atol=1e-8)
    tw = (d2 * d1.conj() - (d2 * d1.conj()).conj()) / (psi * d1.conj() - (psi * d1.conj()).conj())
    # the denominator floor may act in the far tail, so compare the bulk only
    bulk = f > 1e-6 * f.max()
    np.testing.assert_allclose(diag(twarock_kernel(G, 1.0)(rho))[bulk], tw.real[bulk], rtol=1e-8)


def test_mixture_uses_summed_density_and_current():
    a, b = packet(0.7, center=3.0), packet(-0.4, center=5.0)
    m = 0.6 * pure_projector(a).matrix + 0.4 * pure_projector(b).matrix
    rho = DensityMatrix(G, m)
    f = 0.6 * np.abs(a.amplitudes) ** 2 + 0.4 * np.abs(b.amplitudes) ** 2
    j = 0.6 * current_density(pure_projector(a)) + 0.4 * current_density(pure_projector(b))
    np.testing.assert_allclose(diag(haag_bannier_kernel(G, 1.0)(rho)), j / f, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-3, 1e3), which=st.sampled_from(["hb", "tw", "dg", "hom"]))
def test_zero_homogeneous_kernels_are_scale_invariant(c, which):
    kernel = {
        "hb": haag_bannier_kernel(G, 1.0),
        "tw": twarock_kernel(G, 1.0),
        "dg": doebner_goldin_kernel(G, [0.3, -0.2, 0.5, 0.1, -0.4]),
        "hom": homogeneous_kernel(G, lambda u1: u1.imag, (1,), 1),
    }[which]
    rho = pure_projector(packet()).matrix
    h = kernel(rho)
    np.testing.assert_allclose(kernel(c * rho), h, rtol=1e-11, atol=1e-11 * np.max(np.abs(h)))


def test_nls_scales_linearly_and_bbm_shifts():
    rho = pure_projector(packet()).matrix
    np.testing.assert_allclose(nls_kernel(G, 1.0)(3 * rho), 3 * nls_kernel(G, 1.0)(rho), rtol=1e-14)
    shift = bbm_kernel(G, 0.5)(3 * rho) - bbm_kernel(G, 0.5)(rho)
    np.testing.assert_allclose(shift, 0.5 * np.log(3) * np.eye(16), atol=1e-13)


def test_floor_records_activations():
    psi = np.zeros(16, complex)
    psi[:4] = 1
    rho = pure_projector(WaveFunction(G, psi).normalized())
    mon = FloorMonitor()
    h = haag_bannier_kernel(G, 1.0)(rho, mon)
    assert np.all(np.isfinite(h))
    assert mon.total > 0
    assert "haag_bannier" in mon.snapshot()


def test_twarock_vanishes_on_real_state_only_via_floor():
    rho = pure_projector(packet(k=0.0))
    mon = FloorMonitor()
    twarock_kernel(G, 1.0)(rho, mon)
    assert mon.total > 0


def test_twarock_needs_periodic_grid():
    with pytest.raises(ValueError):
        twarock_kernel(make_grid(16, 8.0, periodic=False))


def test_homogeneous_rejects_complex_functional():
    k = homogeneous_kernel(G, lambda u1: u1, (1,), 1)
    with pytest.raises(ValueError, match="non-real"):
        k(pure_projector(packet()))
    with pytest.raises(ValueError):
        homogeneous_kernel(G, lambda u: u.imag, (1,), 0)


def test_homogeneous_reproduces_haag_bannier():
    rho = pure_projector(packet())
    hom = homogeneous_kernel(G, lambda u1: u1.imag, (1,), 1)
    np.testing.assert_allclose(hom(rho), haag_bannier_kernel(G, 1.0)(rho), rtol=1e-14)


def test_doebner_goldin_needs_five():
    with pytest.raises(ValueError):
        doebner_goldin_kernel(G, [1, 2, 3])


def test_compose_adds_pieces():
    rho = pure_projector(packet())
    parts = [kinetic_kernel(G), potential_kernel(G, harmonic_potential(G, 1.0)),
             haag_bannier_kernel(G, 0.5), nls_kernel(G, 2.0)]
    total = compose_kernels(parts)
    np.testing.assert_allclose(total(rho), sum(p(rho) for p in parts), atol=1e-12)
    assert not total.is_linear
    assert compose_kernels(parts[:2]).is_linear
    zero = compose_kernels([], G)
    assert np.all(zero(rho) == 0)
    with pytest.raises(ValueError):
        compose_kernels([])
    with pytest.raises(ValueError):
        compose_kernels([kinetic_kernel(G), kinetic_kernel(make_grid(8, 8.0))])
    with pytest.raises(ValueError):
        compose_kernels([haag_bannier_kernel(G), nls_kernel(G, 1.0, scheme="central_difference")])


def test_kernel_shape_check():
    with pytest.raises(ValueError):
        nls_kernel(G, 1.0)(np.eye(8))


def test_output_is_hermitian():
    rho = pure_projector(packet())
    for k in (haag_bannier_kernel(G), twarock_kernel(G), bbm_kernel(G, 1.0),
              doebner_goldin_kernel(G, [1, 1, 1, 1, 1]), kinetic_kernel(G)):
        h = k(rho)
        np.testing.assert_allclose(h, h.conj().T, atol=1e-12)
