"""Composite objects built from the transition matrices: reduced density
matrices of both layers, mean-field operators and the Hamiltonian matrix in
the basis of SBS products.

Index conventions
-----------------
``eta1[s]`` is the matrix of the reduced density *operator* of species ``s``
in its SBS basis, ``eta1_A = A A^dagger`` and ``eta1_B = A^T A^*``, so that
its eigenvectors are the natural species functions.  Contractions that follow
the multi-index sums use the transpose, ``weights = eta1.T``, whose
``[i, j]`` element multiplies ``<psi_i| ... |psi_j>``.

``rho1[s][k, q] = <a+_k a_q>``, ``rho2_intra[s][k, q, u, v] = <a+_k a+_q a_v a_u>``
and ``rho2_inter[k, q, u, v] = <a+_k a_u b+_q b_v>`` (``a`` for species A, ``b``
for species B).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fock import TransitionTensors
from .grid import Grid, InteractionKernel, OneBodyOperator

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class SpeciesDensities:
    eta1: tuple[np.ndarray, np.ndarray]
    A: np.ndarray

    @cached_property
    def eta2(self) -> np.ndarray:
        """``eta2[iA, iB, jA, jB] = conj(A[iA, iB]) A[jA, jB]``."""
        return np.einsum("ab,cd->abcd", self.A.conj(), self.A)

    def weights(self, s: int) -> np.ndarray:
        """Matrix multiplying ``<psi_i| ... |psi_j>`` in species-``s`` traces."""
        return self.eta1[s].T


@dataclass(frozen=True, eq=False)
class ParticleDensities:
    rho1: tuple[np.ndarray, np.ndarray]
    rho2_intra: tuple[np.ndarray, np.ndarray]
    rho2_inter: np.ndarray

    def rho2_inter_for(self, s: int) -> np.ndarray:
        """Inter-species two-body density seen from species ``s``.

        Returns ``X[p, q, s, l] = <c+_p c_s d+_q d_l>`` with ``c`` the
        operators of species ``s`` and ``d`` those of the partner.
        """
        if s == 0:
            return self.rho2_inter
        return self.rho2_inter.transpose(1, 0, 3, 2)


@dataclass(frozen=True, eq=False)
class MeanFieldSet:
    """Mean-field operators of both layers.

    ``species_ops[s][k, p, r, t]`` is the one-body coefficient matrix (over
    orbitals r, t of species ``s``) of the interaction conditioned on the
    partner species going from SBS ``p`` to SBS ``k``.
    ``intra[s][q, l, x]`` and ``inter[s][q, l, x]`` are the particle-layer
    potentials ``[v_s]^q_l(x)`` and ``[w_{s|partner}]^q_l(x)``.
    """

    species_ops: tuple[np.ndarray, np.ndarray]
    intra: tuple[np.ndarray, np.ndarray]
    inter: tuple[np.ndarray, np.ndarray]


def species_densities(A: np.ndarray) -> SpeciesDensities:
    """Reduced density matrices on the species layer.

    Raises
    ------
    ValueError
        If ``sum |A|^2`` deviates from one by more than 1e-6.
    """
    A = np.asarray(A)
    norm = np.sum(np.abs(A) ** 2)
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ValueError(f"top-layer coefficients not normalised: sum |A|^2 = {norm:.3e}")
    eta_a = A @ A.conj().T
    eta_b = A.T @ A.conj()
    return SpeciesDensities((eta_a, eta_b), A)


def _check_pair(eta: SpeciesDensities, tensors) -> None:
    for s, t in enumerate(tensors):
        if t.d1.shape[0] != eta.eta1[s].shape[0]:
            raise ValueError(
                f"species {'AB'[s]}: {t.d1.shape[0]} SBSs in the transition tensors, "
                f"{eta.eta1[s].shape[0]} in the density matrix")


def one_body_density(weights: np.ndarray, tensors: TransitionTensors) -> np.ndarray:
    return np.tensordot(weights, tensors.d1, axes=([0, 1], [0, 1]))


def inter_two_body_density(A: np.ndarray, tensors: tuple[TransitionTensors, TransitionTensors]) -> np.ndarray:
    """``<a+_k a_u b+_q b_v>`` contracted stepwise through ``A``."""
    d1a, d1b = tensors[0].d1, tensors[1].d1
    # x[iB, jA, k, u] = sum_iA conj(A[iA, iB]) d1a[iA, jA, k, u]
    x = np.tensordot(A.conj(), d1a, axes=([0], [0]))
    # y[iB, k, u, jB] = sum_jA x[iB, jA, ...] A[jA, jB]
    y = np.tensordot(x, A, axes=([1], [0]))
    rho = np.tensordot(y, d1b, axes=([0, 3], [0, 1]))  # k u q v
    return rho.transpose(0, 2, 1, 3)


def particle_densities(eta: SpeciesDensities, tensors: tuple[TransitionTensors, TransitionTensors],
                       A: np.ndarray | None = None) -> ParticleDensities:
    """Reduced one- and two-body density matrices in the orbital basis.

    ``A`` is optional; without it the inter-species density is contracted
    from the full ``eta2``.
    """
    _check_pair(eta, tensors)
    rho1 = tuple(one_body_density(eta.weights(s), t) for s, t in enumerate(tensors))
    rho2 = tuple(t.two_body_density(eta.weights(s)) for s, t in enumerate(tensors))
    if A is None:
        inter = np.einsum("abcd,acku,bdqv->kquv", eta.eta2, tensors[0].d1, tensors[1].d1)
    else:
        inter = inter_two_body_density(A, tensors)
    return ParticleDensities(rho1, rho2, inter)


def transition_densities(tensors: TransitionTensors, orbitals: np.ndarray) -> np.ndarray:
    """``D[i, j, x] = <psi_i| Psi+(x) Psi(x) |psi_j>``."""
    m = orbitals.shape[0]
    pair = (orbitals.conj()[:, None, :] * orbitals[None, :, :]).reshape(m * m, -1)
    nsbs = tensors.d1.shape[0]
    return (tensors.d1.reshape(nsbs * nsbs, m * m) @ pair).reshape(nsbs, nsbs, -1)


def orbital_matrix_elements(grid: Grid, orbitals: np.ndarray, potentials: np.ndarray) -> np.ndarray:
    """``X[..., r, t] = <phi_r| V_... |phi_t>`` for stacked diagonal potentials."""
    lead = potentials.shape[:-1]
    g = potentials.shape[-1]
    m = orbitals.shape[0]
    pots = potentials.reshape(-1, g)
    left = (pots[:, None, :] * orbitals.conj()[None, :, :]).reshape(-1, g)
    out = grid.spacing * (left @ orbitals.T)
    return out.reshape(lead + (m, m))


def intra_integrals(grid: Grid, kernel: InteractionKernel, orbitals: np.ndarray) -> np.ndarray:
    """``V[r, s, u, v] = <phi_r phi_s| v |phi_u phi_v>``."""
    w = kernel.pair_integrals(grid, orbitals, orbitals)  # [r, u, s, v]
    return w.transpose(0, 2, 1, 3)


def mean_field_set(grid: Grid, orbitals, intra_kernels, inter_kernel: InteractionKernel,
                   tensors) -> MeanFieldSet:
    """Mean-field operators on the species and particle layers."""
    if tensors[0].d1.shape[0] != tensors[1].d1.shape[0]:
        raise ValueError("both species need the same number of SBSs")
    dens = [transition_densities(t, phi) for t, phi in zip(tensors, orbitals)]
    species_ops = []
    inter = []
    intra = []
    for s in (0, 1):
        o = 1 - s
        on = "first" if s == 0 else "second"
        pot = inter_kernel.potential(grid, dens[o], on=on)
        species_ops.append(orbital_matrix_elements(grid, orbitals[s], pot))
        pair_o = np.einsum("qx,lx->qlx", orbitals[o].conj(), orbitals[o])
        inter.append(inter_kernel.potential(grid, pair_o, on=on))
        pair_s = np.einsum("qx,lx->qlx", orbitals[s].conj(), orbitals[s])
        intra.append(intra_kernels[s].potential(grid, pair_s))
    return MeanFieldSet(tuple(species_ops), tuple(intra), tuple(inter))


def species_hamiltonians(grid: Grid, orbitals, one_body, intra_kernels, tensors):
    """``<psi_i| H_s + V_s |psi_j>`` for both species, plus ``h`` and ``V`` integrals."""
    mats, h_list, v_list = [], [], []
    for s in (0, 1):
        phi = orbitals[s]
        h = grid.spacing * phi.conj() @ one_body[s].apply(phi).T
        mat = np.tensordot(tensors[s].d1, h, axes=([2, 3], [0, 1]))
        v = None
        if not intra_kernels[s].is_zero:
            v = intra_integrals(grid, intra_kernels[s], phi)
            mat = mat + tensors[s].two_body_matrix(0.5 * v)
        mats.append(mat)
        h_list.append(h)
        v_list.append(v)
    return mats, h_list, v_list


def hamiltonian_matrix(grid: Grid, orbitals, intra_kernels, inter_kernel: InteractionKernel,
                       one_body: tuple[OneBodyOperator, OneBodyOperator], tensors) -> np.ndarray:
    """Hamiltonian in the SBS product basis, ``H[iA, iB, jA, jB]``.

    The inter-species part is contracted through the transition densities of
    both species, which equals the orbital-integral form
    ``sum w^{ru}_{sv} d1_A[.., r, s] d1_B[.., u, v]``.
    """
    mats, _, _ = species_hamiltonians(grid, orbitals, one_body, intra_kernels, tensors)
    nsbs = tensors[0].d1.shape[0]
    if tensors[1].d1.shape[0] != nsbs:
        raise ValueError("both species need the same number of SBSs")
    eye = np.eye(nsbs)
    h = np.einsum("ac,bd->abcd", mats[0], eye) + np.einsum("ac,bd->abcd", eye, mats[1])
    if not inter_kernel.is_zero:
        da = transition_densities(tensors[0], orbitals[0])
        db = transition_densities(tensors[1], orbitals[1])
        vb = inter_kernel.potential(grid, db, on="first")
        inter = grid.spacing * np.tensordot(da, vb, axes=([2], [2]))  # iA jA iB jB
        h = h + inter.transpose(0, 2, 1, 3)
    return h


def sbs_matrix(h: np.ndarray) -> np.ndarray:
    """Flatten ``H[iA, iB, jA, jB]`` to a square matrix acting on ``A.ravel()``."""
    n = h.shape[0] * h.shape[1]
    return h.reshape(n, n)


def energy_from_sbs(h: np.ndarray, A: np.ndarray) -> complex:
    a = A.ravel()
    return complex(a.conj() @ sbs_matrix(h) @ a)


def energy_from_densities(grid: Grid, orbitals, one_body, intra_kernels, inter_kernel,
                          rho: ParticleDensities) -> complex:
    """Energy from one- and two-body density matrices and orbital integrals."""
    e = 0.0
    for s in (0, 1):
        phi = orbitals[s]
        h = grid.spacing * phi.conj() @ one_body[s].apply(phi).T
        e += np.sum(h * rho.rho1[s])
        if not intra_kernels[s].is_zero:
            v = intra_integrals(grid, intra_kernels[s], phi)
            e += 0.5 * np.sum(v * rho.rho2_intra[s])
    if not inter_kernel.is_zero:
        w = inter_kernel.pair_integrals(grid, orbitals[0], orbitals[1])  # [r, s, u, v]
        e += np.sum(w * rho.rho2_inter.transpose(0, 2, 1, 3))
    return complex(e)
