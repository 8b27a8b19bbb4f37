import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepdyn.extension import (ExtensionSpec, embed_operator, extend, extended_operator,
                              extended_operator_pure, naive_extend, naive_operator, split_spec,
                              staged_extend)
from sepdyn.kernels import (compose_kernels, doebner_goldin_kernel, haag_bannier_kernel,
                            harmonic_potential, kinetic_kernel, nls_kernel, potential_kernel)
from sepdyn.lattice import make_grid
from sepdyn.states import (CompositeLayout, DensityMatrix, WaveFunction, partial_trace,
                           pure_projector, tensor_product, tensor_wavefunctions)

G = make_grid(6, 6.0)
X = G.points


def packet(k, c):
    return WaveFunction(G, np.exp(-(X - c) ** 2 / 2 + 1j * k * X)).normalized()


def full_kernel(A, omega=0.5):
    return compose_kernels([kinetic_kernel(G), potential_kernel(G, harmonic_potential(G, omega)),
                            haag_bannier_kernel(G, A)])


def random_density(layout, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((layout.dim, 4)) + 1j * rng.standard_normal((layout.dim, 4))
    m = g @ g.conj().T
    return DensityMatrix(layout, m / (np.real(np.trace(m)) * layout.measure))


def spec_for(n, kernels=None):
    layout = CompositeLayout.repeated(G, n)
    kernels = kernels or [full_kernel(1.0 - 0.2 * i) for i in range(n)]
    return ExtensionSpec(layout, tuple(enumerate(kernels)))


def test_extend_equals_kron_oracle():
    spec = spec_for(2)
    rho = random_density(spec.layout, 0)
    k0, k1 = spec.kernel_for(0), spec.kernel_for(1)
    h0 = k0(partial_trace(rho, [0]))
    h1 = k1(partial_trace(rho, [1]))
    oracle = np.kron(h0, np.eye(6)) + np.kron(np.eye(6), h1)
    np.testing.assert_allclose(extend(rho, spec), oracle, atol=1e-12)


def test_factored_apply_matches_dense():
    spec = spec_for(3)
    rho = random_density(spec.layout, 1)
    op = extended_operator(rho.matrix, spec)
    np.testing.assert_allclose(op.apply(rho.matrix), op.matrix() @ rho.matrix, atol=1e-11)
    v = rho.matrix[:, 0]
    np.testing.assert_allclose(op @ v, op.matrix() @ v, atol=1e-11)


def test_pure_marginals_give_same_operator():
    spec = spec_for(2)
    psi = tensor_wavefunctions([packet(0.5, 2.5), packet(-0.3, 3.5)])
    a = extended_operator(pure_projector(psi).matrix, spec).matrix()
    b = extended_operator_pure(psi.amplitudes, spec).matrix()
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_unassigned_subsystem_gets_identity():
    layout = CompositeLayout.repeated(G, 2)
    spec = ExtensionSpec(layout, ((1, nls_kernel(G, 2.0)),))
    rho = random_density(layout, 2)
    h1 = nls_kernel(G, 2.0)(partial_trace(rho, [1]))
    np.testing.assert_allclose(extend(rho, spec), np.kron(np.eye(6), h1), atol=1e-13)


def test_naive_agrees_on_products_for_scale_invariant_kernels():
    spec = spec_for(2)
    psi = tensor_wavefunctions([packet(0.5, 2.5), packet(-0.3, 3.5)])
    correct = extended_operator_pure(psi.amplitudes, spec).matrix()
    np.testing.assert_allclose(naive_extend(psi, spec), correct, atol=1e-9)


def test_naive_differs_on_entangled_state():
    spec = spec_for(2)
    a, b = packet(0.5, 2.5), packet(-0.3, 3.5)
    ent = (np.kron(a.amplitudes, b.amplitudes) + np.kron(b.amplitudes, a.amplitudes) * 1j)
    psi = WaveFunction(spec.layout, ent).normalized()
    diff = naive_extend(psi, spec) - extended_operator_pure(psi.amplitudes, spec).matrix()
    assert np.max(np.abs(diff)) > 1e-2


def test_naive_on_nls_is_not_the_marginal():
    # a joint-coordinate |psi|^2 carries an extra factor compared with the marginal
    spec = spec_for(2, [nls_kernel(G, 1.0), nls_kernel(G, 1.0)])
    psi = tensor_wavefunctions([packet(0.5, 2.5), packet(-0.3, 3.5)])
    assert not np.allclose(naive_operator(psi.amplitudes, spec).matrix(),
                           extended_operator_pure(psi.amplitudes, spec).matrix())


@pytest.mark.parametrize("positions", [[0], [1], [2], [0, 2], [2, 0], [1, 2]])
def test_embed_operator_matches_permuted_kron(positions):
    layout = CompositeLayout.of(make_grid(4, 1.0), make_grid(5, 1.0), make_grid(6, 1.0))
    rng = np.random.default_rng(3)
    ops = [rng.standard_normal((d, d)) for d in layout.dims]
    dims = [layout.dims[p] for p in positions]
    op = ops[positions[0]] if len(positions) == 1 else np.kron(ops[positions[0]], ops[positions[1]])
    mats = [np.eye(d) for d in layout.dims]
    for p in positions:
        mats[p] = ops[p]
    oracle = mats[0]
    for m in mats[1:]:
        oracle = np.kron(oracle, m)
    assert int(np.prod(dims)) == op.shape[0]
    np.testing.assert_allclose(embed_operator(op, positions, layout), oracle, atol=1e-13)


def partitions(n):
    idx = list(range(n))
    out = [[idx]]
    for r in range(1, n):
        for block in itertools.combinations(idx, r):
            if 0 in block:
                out.append([list(block), [i for i in idx if i not in block]])
    out.append([[i] for i in idx])
    return out


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_staged_extension_equals_direct(seed):
    spec = spec_for(3, [full_kernel(1.0), compose_kernels([kinetic_kernel(G),
                        doebner_goldin_kernel(G, [0.1, 0, 0, 0, 0.02])]), nls_kernel(G, 0.5)])
    rho = random_density(spec.layout, seed)
    direct = extend(rho, spec)
    for part in partitions(3):
        staged = staged_extend(split_spec(spec, part), rho)
        np.testing.assert_allclose(staged, direct, atol=1e-12 * np.max(np.abs(direct)))


def test_staged_partition_validation():
    spec = spec_for(3)
    rho = random_density(spec.layout, 4)
    with pytest.raises(ValueError):
        staged_extend(split_spec(spec, [[0], [1]]), rho)
    with pytest.raises(ValueError):
        staged_extend(split_spec(spec, [[0, 1], [1, 2]]), rho)
    with pytest.raises(ValueError):
        staged_extend([((0, 1, 2), spec_for(2))], rho)


def test_spec_validation():
    layout = CompositeLayout.repeated(G, 2)
    k = nls_kernel(G, 1.0)
    with pytest.raises(IndexError):
        ExtensionSpec(layout, ((2, k),))
    with pytest.raises(ValueError):
        ExtensionSpec(layout, ((0, k), (0, k)))
    with pytest.raises(ValueError):
        ExtensionSpec(layout, ((0, nls_kernel(make_grid(8, 6.0), 1.0)),))
    with pytest.raises(ValueError):
        ExtensionSpec(layout, ((0, k),), mode="other")
    spec = ExtensionSpec(layout, ((1, k), (0, k)))
    assert [i for i, _ in spec.assignments] == [0, 1]
    assert spec.with_mode("naive").mode == "naive"
    assert not spec.is_linear


def test_extend_rejects_naive_mode_and_wrong_layout():
    spec = spec_for(2)
    rho = random_density(spec.layout, 5)
    with pytest.raises(ValueError):
        extend(rho, spec.with_mode("naive"))
    with pytest.raises(ValueError):
        extend(random_density(CompositeLayout.repeated(G, 3), 0), spec)


def test_single_particle_extension_is_the_kernel():
    k = full_kernel(0.7)
    rho = pure_projector(packet(0.4, 3.0))
    np.testing.assert_allclose(extend(rho, ExtensionSpec.single(k)), k(rho), atol=1e-13)
