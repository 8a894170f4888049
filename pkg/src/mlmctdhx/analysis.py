"""Observables and correlation diagnostics.

Natural species functions (NSFs) diagonalise the species reduced density
matrix; natural orbitals (NOs) diagonalise the one-body density matrix.
Both spectra are reported normalised to unit sum and sorted descending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .fock import FockBasis, transition_tensors
from .grid import Grid
from .system import MixtureState, MixtureSystem
from .tensors import (energy_from_sbs, hamiltonian_matrix, one_body_density,
                      species_densities, transition_densities)

TRACE_TOLERANCE = 1e-6
POPULATION_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Populations (descending, unit sum) and the matching modes.

    For NSFs ``modes`` are columns in SBS coordinates; for NOs they are rows
    of grid values.
    """

    populations: np.ndarray
    modes: np.ndarray


@dataclass(frozen=True, eq=False)
class DensityRecord:
    time: float
    densities: tuple[np.ndarray, np.ndarray]
    layers: tuple[np.ndarray, np.ndarray] | None = None
    populations: np.ndarray | None = None


def _continuity_order(populations, overlaps, degeneracy):
    """Permutation keeping near-degenerate modes aligned with the previous ones."""
    order = np.arange(len(populations))
    start = 0
    while start < len(populations):
        stop = start + 1
        while stop < len(populations) and populations[start] - populations[stop] < degeneracy:
            stop += 1
        if stop - start > 1:
            block = np.abs(overlaps[start:stop, start:stop])
            _, cols = linear_sum_assignment(-block)
            order[start:stop] = start + cols
        start = stop
    return order


def _sorted_eigh(matrix, previous=None, degeneracy=1e-8):
    w, v = np.linalg.eigh(matrix)
    idx = np.argsort(-w, kind="stable")
    w, v = w[idx], v[:, idx]
    if previous is not None and previous.shape == v.shape:
        # overlaps[old, new]; slot j keeps the new vector closest to old mode j
        overlaps = previous.conj().T @ v
        perm = _continuity_order(w, overlaps, degeneracy)
        w, v = w[perm], v[:, perm]
    return w, v


def natural_species(eta1: np.ndarray, previous: np.ndarray | None = None,
                    degeneracy: float = 1e-8) -> SpectralDecomposition:
    """Eigen-decomposition of a species reduced density matrix.

    Parameters
    ----------
    eta1 : (M, M) array
        Hermitian, positive semidefinite, unit trace.
    previous : (M, M) array, optional
        Modes of the previous output time, used to order near-degenerate
        populations by maximal overlap.
    """
    tr = np.trace(eta1).real
    if abs(tr - 1.0) > TRACE_TOLERANCE:
        raise ValueError(f"species density matrix has trace {tr:.3e}, expected 1")
    w, v = _sorted_eigh(eta1, previous, degeneracy)
    return SpectralDecomposition(w, v)


def natural_orbitals(rho1: np.ndarray, orbitals: np.ndarray, n_particles: int | None = None,
                     previous: np.ndarray | None = None, degeneracy: float = 1e-8,
                     grid: Grid | None = None) -> SpectralDecomposition:
    """Natural orbitals and populations normalised to unit sum.

    ``rho1[k, q] = <a+_k a_q>`` in the orbital basis.  The one-body density
    operator has the matrix ``rho1.T`` in that basis, so the NOs are
    ``sum_s v[s, k] phi_s``.  ``previous`` holds the NO grid functions of the
    previous output time (requires ``grid``).
    """
    tr = np.trace(rho1).real
    if n_particles is not None and abs(tr - n_particles) > TRACE_TOLERANCE * n_particles:
        raise ValueError(f"one-body density matrix has trace {tr:.6f}, expected {n_particles}")
    prev = None
    if previous is not None and grid is not None:
        prev = grid.spacing * (orbitals.conj() @ previous.T)
    w, v = _sorted_eigh(rho1.T, prev, degeneracy * tr)
    modes = v.T @ orbitals
    return SpectralDecomposition(w / tr, modes)


def density_on_grid(rho1: np.ndarray, orbitals: np.ndarray) -> np.ndarray:
    """``rho(x) = sum_rs rho1[r, s] conj(phi_r(x)) phi_s(x)``."""
    return np.real(np.einsum("rs,rx,sx->x", rho1, orbitals.conj(), orbitals, optimize=True))


def state_densities(state: MixtureState, bases: tuple[FockBasis, FockBasis]):
    """One-body densities of both species and their one-body density matrices."""
    eta = species_densities(state.A)
    rho1 = []
    dens = []
    for s in (0, 1):
        t = transition_tensors(state.coefficients[s], bases[s], two_body=False)
        r = one_body_density(eta.weights(s), t)
        rho1.append(r)
        dens.append(density_on_grid(r, state.orbitals[s]))
    return tuple(dens), tuple(rho1)


def schmidt_layers(state: MixtureState, bases: tuple[FockBasis, FockBasis]) -> DensityRecord:
    """Schmidt decomposition of the state and NSF-resolved densities.

    The decomposition ``A = U diag(s) V^dagger`` diagonalises both species
    density matrices at once: ``lambda_k = s_k**2``, the species-A NSFs are
    the columns of ``U`` and the species-B NSFs the columns of ``conj(V)``.
    ``layers[s][k]`` is ``lambda_k * rho_{1,k}(x)`` and the layers resum to the
    full density.
    """
    u, sv, vh = np.linalg.svd(state.A)
    lam = sv**2
    nsf = (u, vh.T)  # columns: NSF coefficients in SBS coordinates
    layers = []
    dens = []
    for s in (0, 1):
        t = transition_tensors(state.coefficients[s], bases[s], two_body=False)
        d = transition_densities(t, state.orbitals[s])
        c = nsf[s]
        # rho_k(x) = sum_ij conj(c_ik) c_jk D[i, j, x]
        lay = np.einsum("ik,jk,ijx->kx", c.conj(), c, d, optimize=True).real * lam[:, None]
        layers.append(lay)
        dens.append(lay.sum(axis=0))
    return DensityRecord(state.t, tuple(dens), tuple(layers), lam)


def density_difference(rho_c: np.ndarray, rho_c2: np.ndarray, n_particles: int,
                       grid: Grid | float) -> np.ndarray:
    """Spatially integrated density difference in ``[0, 1]``.

    ``(1 / 2N) * integral |rho_C(x) - rho_C'(x)| dx``; works on stacks of
    densities along leading axes.
    """
    a = np.asarray(rho_c)
    b = np.asarray(rho_c2)
    if a.shape != b.shape:
        raise ValueError(f"densities live on different grids: {a.shape} vs {b.shape}")
    dx = grid.spacing if isinstance(grid, Grid) else float(grid)
    return dx * np.sum(np.abs(a - b), axis=-1) / (2.0 * n_particles)


def population_difference(pop_c: np.ndarray, pop_c2: np.ndarray, index: int) -> np.ndarray:
    """Relative population difference ``|p_C - p_C'| / p_C'`` of mode ``index``.

    Entries where the reference population is below 1e-12 are undefined and
    returned as NaN.
    """
    a = np.asarray(pop_c)[..., index]
    b = np.asarray(pop_c2)[..., index]
    out = np.full(np.shape(b), np.nan)
    ok = b >= POPULATION_FLOOR
    out[ok] = np.abs(a[ok] - b[ok]) / b[ok]
    return out


def total_energy(state: MixtureState, system: MixtureSystem,
                 bases: tuple[FockBasis, FockBasis] | None = None) -> float:
    """``<Psi|H|Psi>`` through the Hamiltonian matrix in the SBS product basis."""
    if bases is None:
        from .fock import enumerate_basis
        bases = tuple(enumerate_basis(s.statistics, s.n_particles, phi.shape[0])
                      for s, phi in zip(system.species, state.orbitals))
    tensors = tuple(transition_tensors(c, b, two_body=not k.is_zero)
                    for c, b, k in zip(state.coefficients, bases, system.intra_kernels))
    h = hamiltonian_matrix(system.grid, state.orbitals, system.intra_kernels,
                           system.inter_kernel, system.one_body, tensors)
    e = energy_from_sbs(h, state.A)
    return e.real


def center_of_mass(density: np.ndarray, grid: Grid) -> np.ndarray:
    """``<x>`` per particle of a density (or a stack of densities)."""
    n = grid.integrate(density)
    return grid.integrate(density * grid.points) / n


def side_population(density: np.ndarray, grid: Grid, side: float) -> np.ndarray:
    """Fraction of a density on the side ``sign(x) == sign(side)``.

    The point ``x = 0`` is split evenly between both sides.
    """
    x = grid.points
    weight = np.where(np.sign(x) == np.sign(side), 1.0, 0.0)
    weight[x == 0] = 0.5
    total = grid.integrate(density)
    return grid.integrate(density * weight) / total


def classify_orbitals(populations: np.ndarray, n_particles: int,
                      core_depletion: float = 1e-2) -> dict[str, np.ndarray]:
    """Split fermionic NOs into core, valence and excited orbitals.

    The first ``n_particles`` NOs are initially occupied; those with depletion
    ``1/N - n_i`` below ``core_depletion`` are core, the rest valence.  NOs
    beyond ``n_particles`` are excited.
    """
    pops = np.asarray(populations)
    occupied = np.arange(min(n_particles, len(pops)))
    depletion = 1.0 / n_particles - pops[occupied]
    return {
        "core": occupied[depletion < core_depletion],
        "valence": occupied[depletion >= core_depletion],
        "excited": np.arange(n_particles, len(pops)),
    }
