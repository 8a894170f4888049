import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmctdhx.fock import BOSON, FERMION, enumerate_basis, transition_tensors
from mlmctdhx.grid import build_grid, lowest_eigenstates, single_particle_hamiltonian, tabulated_kernel
from mlmctdhx.oracle import product_grid_hamiltonian
from mlmctdhx.system import Truncation
from mlmctdhx.tensors import (energy_from_densities, energy_from_sbs, hamiltonian_matrix,
                              mean_field_set, particle_densities, sbs_matrix, species_densities,
                              species_hamiltonians)

from conftest import mixture, random_state


def build(system, state):
    bases = Truncation(state.n_sbs, tuple(p.shape[0] for p in state.orbitals)).bases(system)
    tensors = tuple(transition_tensors(c, b) for c, b in zip(state.coefficients, bases))
    return bases, tensors


def test_product_state_species_density():
    A = np.zeros((3, 3))
    A[0, 0] = 1
    eta = species_densities(A)
    for s in (0, 1):
        np.testing.assert_allclose(np.linalg.eigvalsh(eta.eta1[s])[::-1], [1, 0, 0], atol=1e-15)


def test_entangled_pair_species_density():
    A = np.diag([1, 1]) / np.sqrt(2)
    np.testing.assert_allclose(np.linalg.eigvalsh(species_densities(A).eta1[0]), [0.5, 0.5])


def test_unnormalised_top_layer_rejected():
    with pytest.raises(ValueError):
        species_densities(np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_schmidt_spectra_agree(M, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    eta = species_densities(A / np.linalg.norm(A))
    la, lb = (np.linalg.eigvalsh(e) for e in eta.eta1)
    np.testing.assert_allclose(la, lb, atol=1e-10)
    assert np.trace(eta.eta1[0]).real == pytest.approx(1.0, abs=1e-12)
    assert la.min() >= -1e-10
    Ah = A / np.linalg.norm(A)
    np.testing.assert_allclose(eta.eta2, np.einsum("ab,cd->abcd", Ah.conj(), Ah))


def test_noninteracting_fermion_orbital_populations():
    sysm = mixture(FERMION, BOSON, n=(2, 2), g=(0, 0), g_ab=0.0, G=64, L=6.0)
    b = enumerate_basis(FERMION, 2, 4)
    c = np.zeros((1, b.size), complex)
    c[0, b.index((1, 1, 0, 0))] = 1
    t = transition_tensors(c, b)
    eta = species_densities(np.ones((1, 1)))
    rho = particle_densities(eta, (t, t))
    pops = np.sort(np.linalg.eigvalsh(rho.rho1[0]))[::-1] / 2
    np.testing.assert_allclose(pops, [0.5, 0.5, 0, 0], atol=1e-15)


def test_condensate_one_body_density():
    b = enumerate_basis(BOSON, 2, 2)
    c = np.zeros((1, 3), complex)
    c[0, b.index((2, 0))] = 1
    t = transition_tensors(c, b)
    rho = particle_densities(species_densities(np.ones((1, 1))), (t, t))
    np.testing.assert_allclose(rho.rho1[0], np.diag([2, 0]))


@pytest.mark.parametrize("stats", [(BOSON, FERMION), (FERMION, FERMION), (BOSON, BOSON)])
def test_density_matrix_traces(stats, rng):
    sysm = mixture(*stats, n=(3, 2), G=24)
    tr = Truncation(3, (4, 3))
    state = random_state(sysm, tr, rng)
    _, tensors = build(sysm, state)
    eta = species_densities(state.A)
    rho = particle_densities(eta, tensors, state.A)
    rho_eta2 = particle_densities(eta, tensors)
    np.testing.assert_allclose(rho.rho2_inter, rho_eta2.rho2_inter, atol=1e-12)
    for s, n in enumerate((3, 2)):
        assert np.trace(rho.rho1[s]).real == pytest.approx(n, abs=1e-12)
        assert np.einsum("kqkq->", rho.rho2_intra[s]).real == pytest.approx(n * (n - 1), abs=1e-11)
        assert np.linalg.eigvalsh(rho.rho1[s]).min() >= -1e-10
        np.testing.assert_allclose(rho.rho1[s], rho.rho1[s].conj().T, atol=1e-13)
    assert np.einsum("kqkq->", rho.rho2_inter).real == pytest.approx(6, abs=1e-11)


def test_mean_fields_vanish_without_coupling(rng):
    sysm = mixture(g_ab=0.0)
    state = random_state(sysm, Truncation(2, (3, 3)), rng)
    _, tensors = build(sysm, state)
    mf = mean_field_set(sysm.grid, state.orbitals, sysm.intra_kernels, sysm.inter_kernel, tensors)
    for s in (0, 1):
        assert not np.any(mf.species_ops[s])
        assert not np.any(mf.inter[s])


def test_contact_mean_field_is_gross_pitaevskii_coupling(rng):
    sysm = mixture(BOSON, BOSON, n=(2, 3), g_ab=0.9)
    state = random_state(sysm, Truncation(1, (1, 1)), rng)
    _, tensors = build(sysm, state)
    mf = mean_field_set(sysm.grid, state.orbitals, sysm.intra_kernels, sysm.inter_kernel, tensors)
    np.testing.assert_allclose(mf.inter[0][0, 0], 0.9 * np.abs(state.orbitals[1][0]) ** 2, atol=1e-14)


@pytest.mark.parametrize("contact", [True, False])
def test_mean_field_hermiticity(contact, rng):
    grid = build_grid(5.0, 32)
    x = grid.points
    kernel = tabulated_kernel(0.5 / (1 + (x[:, None] - x[None, :]) ** 2)) if not contact else None
    sysm = mixture(inter_kernel=kernel)
    state = random_state(sysm, Truncation(3, (3, 3)), rng)
    _, tensors = build(sysm, state)
    mf = mean_field_set(sysm.grid, state.orbitals, sysm.intra_kernels, sysm.inter_kernel, tensors)
    for s in (0, 1):
        u = mf.species_ops[s]
        for i in range(3):
            assert np.abs(u[i, i] - u[i, i].conj().T).max() < 1e-12
        np.testing.assert_allclose(mf.inter[s], mf.inter[s].transpose(1, 0, 2).conj(), atol=1e-14)


def test_noninteracting_level_sums():
    sysm = mixture(BOSON, FERMION, n=(2, 2), g=(0, 0), g_ab=0.0, L=8.0, G=256)
    grid = sysm.grid
    _, phi = lowest_eigenstates(grid, sysm.one_body[0], 2)
    orbitals = (phi[:1].astype(complex), phi.astype(complex))
    tensors = []
    for stat, occ, m in ((BOSON, (2,), 1), (FERMION, (1, 1), 2)):
        b = enumerate_basis(stat, 2, m)
        c = np.zeros((1, b.size), complex)
        c[0, b.index(occ)] = 1
        tensors.append(transition_tensors(c, b))
    h = hamiltonian_matrix(grid, orbitals, sysm.intra_kernels, sysm.inter_kernel, sysm.one_body, tensors)
    mats, _, _ = species_hamiltonians(grid, orbitals, sysm.one_body, sysm.intra_kernels, tensors)
    assert mats[0][0, 0].real == pytest.approx(1.0, abs=1e-8)
    assert mats[1][0, 0].real == pytest.approx(2.0, abs=1e-8)
    assert energy_from_sbs(h, np.ones((1, 1))).real == pytest.approx(3.0, abs=1e-8)


def test_displaced_condensate_energy_after_quench():
    sysm = mixture(BOSON, BOSON, n=(2, 1), g=(0, 0), g_ab=0.0, offsets=(2.0, 0.0), L=10.0, G=256)
    grid = sysm.grid
    _, phi = lowest_eigenstates(grid, sysm.one_body[0], 1)
    centred = sysm.quenched()
    b = enumerate_basis(BOSON, 2, 1)
    tensors = [transition_tensors(np.ones((1, 1)), b),
               transition_tensors(np.ones((1, 1)), enumerate_basis(BOSON, 1, 1))]
    _, psi = lowest_eigenstates(grid, centred.one_body[1], 1)
    mats, _, _ = species_hamiltonians(grid, (phi.astype(complex), psi.astype(complex)), centred.one_body,
                                      centred.intra_kernels, tensors)
    assert mats[0][0, 0].real == pytest.approx(1.0 + 2 * 2.0**2 / 2, abs=1e-8)


def test_full_matrix_matches_product_grid_hamiltonian(rng):
    sysm = mixture(BOSON, FERMION, n=(1, 1), g=(0, 0), g_ab=1.3, offsets=(0.5, -1.0), L=4.0, G=16)
    G = sysm.grid.n_points
    state = random_state(sysm, Truncation(G, (G, G)), rng)
    _, tensors = build(sysm, state)
    h = hamiltonian_matrix(sysm.grid, state.orbitals, sysm.intra_kernels, sysm.inter_kernel,
                           sysm.one_body, tensors)
    # SBS i of one particle on the grid: psi_i(x) = sum_r C[i, r] phi_r(x) sqrt(dx)
    dx = sysm.grid.spacing
    u = [c @ p * np.sqrt(dx) for c, p in zip(state.coefficients, state.orbitals)]
    basis = np.einsum("ax,by->abxy", u[0], u[1]).reshape(G * G, G * G)
    dense = basis.conj() @ product_grid_hamiltonian(sysm) @ basis.T
    np.testing.assert_allclose(sbs_matrix(h), dense, atol=1e-9)


@pytest.mark.parametrize("stats", [(BOSON, FERMION), (BOSON, BOSON), (FERMION, FERMION)])
def test_energy_two_routes(stats, rng):
    grid = build_grid(5.0, 32)
    x = grid.points
    soft = tabulated_kernel(0.4 * np.exp(-(x[:, None] - x[None, :]) ** 2))
    for kernel in (None, soft):
        sysm = mixture(*stats, n=(2, 3), g=(0.3, 0.2), inter_kernel=kernel)
        state = random_state(sysm, Truncation(3, (4, 4)), rng)
        _, tensors = build(sysm, state)
        h = hamiltonian_matrix(sysm.grid, state.orbitals, sysm.intra_kernels, sysm.inter_kernel,
                               sysm.one_body, tensors)
        hm = sbs_matrix(h)
        assert np.abs(hm - hm.conj().T).max() < 1e-12 * np.abs(hm).max()
        e1 = energy_from_sbs(h, state.A)
        rho = particle_densities(species_densities(state.A), tensors, state.A)
        e2 = energy_from_densities(sysm.grid, state.orbitals, sysm.one_body, sysm.intra_kernels,
                                   sysm.inter_kernel, rho)
        assert abs(e1 - e2) <= 1e-10 * abs(e1)
        assert abs(e1.imag) <= 1e-12 * abs(e1)
