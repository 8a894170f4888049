"""Brute-force references that share no machinery with the variational engine.

* Operator-string second quantisation: number-state sectors enumerated by
  brute force, creators and annihilators built by moving operators through
  the ordered creator string, and dense reduced transition matrices.
* Exact propagation of one particle per species on the product grid.
* Dense configuration interaction in a truncated harmonic-oscillator basis.
* Coupled Gross-Pitaevskii / Hartree-Fock dynamics by split-step Fourier
  (sine-transform) propagation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.linalg

from .grid import Grid, InteractionKernel

MAX_PRODUCT_GRID = 64
MAX_CI_DIMENSION = 20_000


# ---------------------------------------------------------------- operator strings

@lru_cache(maxsize=None)
def sector_states(statistics: str, n_particles: int, n_orbitals: int) -> tuple[tuple[int, ...], ...]:
    """All occupations of an ``n_particles`` sector, ascending lexicographic order."""
    pick = itertools.combinations if statistics == "fermion" else itertools.combinations_with_replacement
    occ = []
    for labels in pick(range(n_orbitals), n_particles):
        o = [0] * n_orbitals
        for k in labels:
            o[k] += 1
        occ.append(tuple(o))
    return tuple(sorted(occ))


def _creator_string(occupation) -> list[int]:
    """Orbital labels of the ordered product ``a+_{o1} a+_{o2} ... |0>``."""
    return [k for k, n in enumerate(occupation) for _ in range(n)]


def _sort_with_sign(labels: list[int]) -> tuple[list[int], int]:
    """Bubble sort of fermionic creators; each transposition flips the sign."""
    labels = list(labels)
    sign = 1
    for i in range(len(labels)):
        for j in range(len(labels) - 1 - i):
            if labels[j] > labels[j + 1]:
                labels[j], labels[j + 1] = labels[j + 1], labels[j]
                sign = -sign
    return labels, sign


def _apply_creator(statistics, occupation, k):
    if statistics == "boson":
        new = list(occupation)
        new[k] += 1
        return tuple(new), np.sqrt(new[k])
    if occupation[k]:
        return None, 0.0
    string = [k] + _creator_string(occupation)
    _, sign = _sort_with_sign(string)
    new = list(occupation)
    new[k] = 1
    return tuple(new), float(sign)


def _apply_annihilator(statistics, occupation, k):
    if occupation[k] == 0:
        return None, 0.0
    new = list(occupation)
    new[k] -= 1
    if statistics == "boson":
        return tuple(new), np.sqrt(occupation[k])
    string = _creator_string(occupation)
    # anticommute a_k to the left end of the string, past every creator ahead of a+_k
    passes = string.index(k)
    return tuple(new), (-1.0) ** passes


def ladder_matrix(statistics: str, n_orbitals: int, n_particles: int, k: int, create: bool) -> np.ndarray:
    """Dense ``a+_k`` (sector N -> N+1) or ``a_k`` (sector N -> N-1)."""
    source = sector_states(statistics, n_particles, n_orbitals)
    n_target = n_particles + 1 if create else n_particles - 1
    target = sector_states(statistics, n_target, n_orbitals)
    index = {o: i for i, o in enumerate(target)}
    out = np.zeros((len(target), len(source)))
    apply = _apply_creator if create else _apply_annihilator
    for col, occ in enumerate(source):
        new, amp = apply(statistics, occ, k)
        if new is not None and new in index:
            out[index[new], col] = amp
    return out


def _to_oracle_order(coefficients, states, statistics, n_orbitals):
    """Scatter coefficient columns given in ``states`` order into oracle order."""
    order = {o: i for i, o in enumerate(sector_states(statistics, int(sum(states[0])), n_orbitals))}
    out = np.zeros((coefficients.shape[0], len(order)), dtype=complex)
    for col, occ in enumerate(states):
        out[:, order[tuple(int(v) for v in occ)]] = coefficients[:, col]
    return out


def dense_transition_matrices(coefficients: np.ndarray, states, statistics: str,
                              n_orbitals: int) -> tuple[np.ndarray, np.ndarray]:
    """``d1[i,j,k,q] = <psi_i|a+_k a_q|psi_j>`` and
    ``d2[i,j,k,q,q',k'] = <psi_i|a+_k a+_q a_q' a_k'|psi_j>`` from dense operators.

    ``states`` lists the occupation of each coefficient column.
    """
    c = _to_oracle_order(np.atleast_2d(coefficients), np.asarray(states), statistics, n_orbitals)
    n = int(np.sum(states[0]))
    m = n_orbitals
    nsbs = c.shape[0]
    d1 = np.zeros((nsbs, nsbs, m, m), dtype=complex)
    d2 = np.zeros((nsbs, nsbs, m, m, m, m), dtype=complex)
    if n == 0:
        return d1, d2
    cre1 = [ladder_matrix(statistics, m, n - 1, k, True) for k in range(m)]
    ann1 = [ladder_matrix(statistics, m, n, k, False) for k in range(m)]
    bra = c.conj()
    for k, q in itertools.product(range(m), repeat=2):
        d1[:, :, k, q] = bra @ (cre1[k] @ ann1[q]) @ c.T
    if n >= 2:
        cre2 = [ladder_matrix(statistics, m, n - 2, k, True) for k in range(m)]
        ann2 = [ladder_matrix(statistics, m, n - 1, k, False) for k in range(m)]
        left = [[bra @ cre1[k] @ cre2[q] for q in range(m)] for k in range(m)]
        right = [[ann2[qp] @ ann1[kp] @ c.T for kp in range(m)] for qp in range(m)]
        for k, q, qp, kp in itertools.product(range(m), repeat=4):
            d2[:, :, k, q, qp, kp] = left[k][q] @ right[qp][kp]
    return d1, d2


# ---------------------------------------------------------------- results

@dataclass(frozen=True, eq=False)
class FullCIState:
    """Dense reference state.

    ``basis`` describes the single-particle basis (``"product-grid"`` or
    ``"harmonic"``), ``vector`` is the normalised coefficient vector and
    ``hamiltonian`` the dense matrix it was obtained from.
    """

    basis: str
    vector: np.ndarray
    hamiltonian: np.ndarray

    @property
    def energy(self) -> float:
        v = self.vector
        return float((v.conj() @ self.hamiltonian @ v).real)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Observables of a reference propagation at ``times``.

    ``densities[s]`` is ``(T, G)``; ``populations`` (NSF spectrum) and
    ``orbital_populations`` are present where the reference provides them.
    """

    times: np.ndarray
    densities: tuple[np.ndarray, np.ndarray]
    energies: np.ndarray
    norms: np.ndarray
    initial: FullCIState | None = None
    populations: np.ndarray | None = None
    orbital_populations: tuple[np.ndarray, np.ndarray] | None = None


# ---------------------------------------------------------------- product grid

def _one_body_dense(grid: Grid, mass: float, frequency: float, offset: float) -> np.ndarray:
    """Sine-DVR kinetic energy plus the trap, assembled from the box modes directly."""
    g = grid.n_points
    j = np.arange(1, g + 1)
    u = np.sqrt(2.0 / (g + 1)) * np.sin(np.pi * np.outer(j, j) / (g + 1))
    if grid.periodic:
        raise ValueError("the product-grid reference supports hard-wall grids only")
    box = (grid.n_points + 1) * grid.spacing
    energies = (j * np.pi / box) ** 2 / (2.0 * mass)
    t = u @ np.diag(energies) @ u
    return t + np.diag(0.5 * mass * frequency**2 * (grid.points - offset) ** 2)


def _pair_table(grid: Grid, kernel: InteractionKernel) -> np.ndarray:
    if kernel.kind == "contact":
        return kernel.strength * np.eye(grid.n_points) / grid.spacing
    return np.asarray(kernel.table)


def product_grid_hamiltonian(system, offsets=None) -> np.ndarray:
    """Dense Hamiltonian of one A and one B particle on the product grid."""
    grid = system.grid
    if system.n_particles != (1, 1):
        raise ValueError("the product-grid reference needs exactly one particle per species")
    if grid.n_points > MAX_PRODUCT_GRID:
        raise ValueError(f"product grid limited to G <= {MAX_PRODUCT_GRID}, got {grid.n_points}")
    sa, sb = system.species
    xa, xb = offsets if offsets is not None else (sa.offset, sb.offset)
    ha = _one_body_dense(grid, sa.mass, sa.frequency, xa)
    hb = _one_body_dense(grid, sb.mass, sb.frequency, xb)
    eye = np.eye(grid.n_points)
    h = np.kron(ha, eye) + np.kron(eye, hb)
    h += np.diag(_pair_table(grid, system.inter_kernel).ravel())
    return h


def exact_two_particle(system, times, initial: np.ndarray | None = None) -> ReferenceTrajectory:
    """Quench dynamics of one particle per species on the product grid.

    The initial state is the ground state of ``system`` (with its offsets)
    unless a grid wavefunction ``initial[x_A, x_B]`` is given; it is then
    propagated exactly in the centred trap through the eigenbasis of the dense
    Hamiltonian.  Densities come from partial traces.
    """
    grid = system.grid
    g = grid.n_points
    dx = grid.spacing
    if initial is None:
        h0 = product_grid_hamiltonian(system)
        w0, v0 = np.linalg.eigh(h0)
        psi0 = v0[:, 0].astype(complex)
        start = FullCIState("product-grid", psi0, h0)
    else:
        psi0 = np.asarray(initial, dtype=complex).ravel() * dx
        psi0 /= np.linalg.norm(psi0)
        start = None
    h = product_grid_hamiltonian(system, offsets=(0.0, 0.0))
    w, v = np.linalg.eigh(h)
    amp = v.conj().T @ psi0
    times = np.asarray(times, dtype=float)
    dens_a, dens_b, energies, norms = [], [], [], []
    for t in times:
        psi = v @ (np.exp(-1j * w * t) * amp)
        p = (np.abs(psi) ** 2).reshape(g, g) / dx
        dens_a.append(p.sum(axis=1))
        dens_b.append(p.sum(axis=0))
        energies.append(float(np.sum(w * np.abs(amp) ** 2)))
        norms.append(float(np.linalg.norm(psi) ** 2))
    return ReferenceTrajectory(times, (np.array(dens_a), np.array(dens_b)),
                               np.array(energies), np.array(norms), start)


# ---------------------------------------------------------------- harmonic basis

def hermite_functions(n: int, x: np.ndarray, mass: float = 1.0, frequency: float = 1.0) -> np.ndarray:
    """Normalised oscillator eigenfunctions ``psi_0 .. psi_{n-1}`` at ``x``."""
    a = mass * frequency
    xi = np.sqrt(a) * np.asarray(x, dtype=float)
    out = np.zeros((n,) + xi.shape)
    out[0] = (a / np.pi) ** 0.25 * np.exp(-0.5 * xi**2)
    if n > 1:
        out[1] = np.sqrt(2.0) * xi * out[0]
    for k in range(1, n - 1):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * xi * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def harmonic_one_body(n: int, mass: float, frequency: float, offset: float) -> np.ndarray:
    """``p^2/2m + m w^2 (x - x0)^2 / 2`` in the centred oscillator basis."""
    k = np.arange(n)
    h = np.diag((k + 0.5) * frequency)
    x = np.diag(np.sqrt((k[1:]) / (2.0 * mass * frequency)), 1)
    x = x + x.T
    return h - mass * frequency**2 * offset * x + 0.5 * mass * frequency**2 * offset**2 * np.eye(n)


def contact_integrals(basis_x, basis_y, exponent: float) -> np.ndarray:
    """``int phi_r phi_s chi_u chi_v dx`` by Gauss-Hermite quadrature.

    ``basis_x`` and ``basis_y`` map quadrature points to function values;
    ``exponent`` is the Gaussian decay rate of the fourfold product.
    """
    n = 64
    u, wts = np.polynomial.hermite.hermgauss(n)
    x = u / np.sqrt(exponent)
    weight = wts * np.exp(u**2) / np.sqrt(exponent)
    fx = basis_x(x)
    fy = basis_y(x)
    return np.einsum("q,rq,sq,uq,vq->rsuv", weight, fx, fx, fy, fy, optimize=True)


def _species_operators(statistics, n_particles, n_orbitals):
    n = n_particles
    m = n_orbitals
    cre = [ladder_matrix(statistics, m, n - 1, k, True) for k in range(m)]
    ann = [ladder_matrix(statistics, m, n, k, False) for k in range(m)]
    e1 = np.array([[cre[r] @ ann[s] for s in range(m)] for r in range(m)])
    return cre, ann, e1


def _two_body_operator(statistics, n_particles, m, v):
    """``1/2 sum v[r,s,u,w] a+_r a+_s a_w a_u`` in the sector."""
    n = n_particles
    dim = len(sector_states(statistics, n, m))
    if n < 2:
        return np.zeros((dim, dim))
    cre1 = [ladder_matrix(statistics, m, n - 1, k, True) for k in range(m)]
    ann1 = [ladder_matrix(statistics, m, n, k, False) for k in range(m)]
    cre2 = [ladder_matrix(statistics, m, n - 2, k, True) for k in range(m)]
    ann2 = [ladder_matrix(statistics, m, n - 1, k, False) for k in range(m)]
    out = np.zeros((dim, dim))
    for r, s, u, w in itertools.product(range(m), repeat=4):
        if v[r, s, u, w] != 0.0:
            out += 0.5 * v[r, s, u, w] * (cre1[r] @ cre2[s] @ ann2[w] @ ann1[u])
    return out


def fullci_hamiltonian(system, n_ho: int, offsets=None):
    """Dense mixture Hamiltonian in the product number-state basis.

    Returns the matrix and the one-body operator tables ``E[s][r, q]``
    (``a+_r a_q`` of species ``s``) needed for observables.
    """
    sa, sb = system.species
    if system.inter_kernel.kind != "contact" or any(k.kind != "contact" for k in system.intra_kernels):
        raise ValueError("the harmonic-basis reference supports contact interactions only")
    dims = [len(sector_states(s.statistics, s.n_particles, n_ho)) for s in system.species]
    if dims[0] * dims[1] > MAX_CI_DIMENSION:
        raise ValueError(f"dense dimension {dims[0] * dims[1]} exceeds {MAX_CI_DIMENSION}")
    offs = offsets if offsets is not None else (sa.offset, sb.offset)
    funcs = [lambda x, s=s: hermite_functions(n_ho, x, s.mass, s.frequency) for s in system.species]
    decay = [s.mass * s.frequency for s in system.species]
    blocks = []
    ops = []
    for idx, s in enumerate(system.species):
        _, _, e1 = _species_operators(s.statistics, s.n_particles, n_ho)
        h1 = harmonic_one_body(n_ho, s.mass, s.frequency, offs[idx])
        hs = np.tensordot(h1, e1, axes=([0, 1], [0, 1]))
        g = system.intra_kernels[idx].strength
        if g != 0.0 and s.n_particles >= 2:
            v = g * contact_integrals(funcs[idx], funcs[idx], 2 * decay[idx])  # [r, u, s, v]
            hs = hs + _two_body_operator(s.statistics, s.n_particles, n_ho, v.transpose(0, 2, 1, 3))
        blocks.append(hs)
        ops.append(e1)
    h = np.kron(blocks[0], np.eye(dims[1])) + np.kron(np.eye(dims[0]), blocks[1])
    gab = system.inter_kernel.strength
    if gab != 0.0:
        w = gab * contact_integrals(funcs[0], funcs[1], decay[0] + decay[1])  # [r, s, u, v]
        for r, s in itertools.product(range(n_ho), repeat=2):
            partner = np.tensordot(w[r, s], ops[1], axes=([0, 1], [0, 1]))
            h += np.kron(ops[0][r, s], partner)
    return h, tuple(ops), tuple(dims)


def fullci_small(system, n_ho: int, times, grid: Grid | None = None) -> ReferenceTrajectory:
    """Ground state in the displaced traps and quench dynamics, densely.

    ``times`` may be empty to obtain only the ground state (``initial``).
    Densities are evaluated on ``grid`` (defaults to ``system.grid``).
    """
    h0, ops, dims = fullci_hamiltonian(system, n_ho)
    w0, v0 = np.linalg.eigh(h0)
    start = FullCIState("harmonic", v0[:, 0].astype(complex), h0)
    h, _, _ = fullci_hamiltonian(system, n_ho, offsets=(0.0, 0.0))
    w, v = np.linalg.eigh(h)
    amp = v.T @ start.vector
    grid = grid if grid is not None else system.grid
    funcs = [hermite_functions(n_ho, grid.points, s.mass, s.frequency) for s in system.species]
    out = {k: [] for k in ("rhoA", "rhoB", "lam", "nA", "nB", "E", "norm")}
    for t in np.asarray(times, dtype=float):
        psi = v @ (np.exp(-1j * w * t) * amp)
        mat = psi.reshape(dims)
        sv = np.linalg.svd(mat, compute_uv=False)
        out["lam"].append(sv**2)
        rho_a = np.einsum("ab,rsac,cb->rs", mat.conj(), ops[0], mat, optimize=True)
        rho_b = np.einsum("ab,rsbc,ac->rs", mat.conj(), ops[1], mat, optimize=True)
        for key, rho, f, n in (("A", rho_a, funcs[0], system.species[0].n_particles),
                               ("B", rho_b, funcs[1], system.species[1].n_particles)):
            out["rho" + key].append(np.einsum("rs,rx,sx->x", rho, f, f).real)
            out["n" + key].append(np.sort(np.linalg.eigvalsh(rho.T))[::-1] / n)
        out["E"].append(float(np.sum(w * np.abs(amp) ** 2)))
        out["norm"].append(float(np.linalg.norm(psi) ** 2))
    arr = {k: np.array(val) for k, val in out.items()}
    return ReferenceTrajectory(np.asarray(times, dtype=float), (arr["rhoA"], arr["rhoB"]),
                               arr["E"], arr["norm"], start, arr["lam"], (arr["nA"], arr["nB"]))


# ---------------------------------------------------------------- mean field

def _kinetic_propagator(grid: Grid, mass: float, dt: float):
    g = grid.n_points
    if grid.periodic:
        k = 2.0 * np.pi * np.fft.fftfreq(g, d=grid.spacing)
        phase = np.exp(-1j * dt * k**2 / (2.0 * mass))
        return lambda f: np.fft.ifft(phase * np.fft.fft(f, axis=-1), axis=-1)
    box = (g + 1) * grid.spacing
    energies = (np.arange(1, g + 1) * np.pi / box) ** 2 / (2.0 * mass)
    phase = np.exp(-1j * dt * energies)
    # the orthonormal type-I sine transform is its own inverse
    return lambda f: scipy.fft.dst(phase * scipy.fft.dst(f, type=1, norm="ortho", axis=-1),
                                   type=1, norm="ortho", axis=-1)


def _mean_field_potentials(system, orbitals):
    grid = system.grid
    dens = []
    for s, phi in zip(system.species, orbitals):
        if s.statistics == "boson":
            dens.append(s.n_particles * np.abs(phi[0]) ** 2)
        else:
            dens.append(np.sum(np.abs(phi) ** 2, axis=0))
    pots = []
    for i, s in enumerate(system.species):
        x0 = 0.0  # propagation happens after the quench
        v = 0.5 * s.mass * s.frequency**2 * (grid.points - x0) ** 2
        if s.statistics == "boson" and s.n_particles > 1:
            v = v + _apply_kernel(grid, system.intra_kernels[i], (s.n_particles - 1) * np.abs(orbitals[i][0]) ** 2, i)
        other = dens[1 - i]
        v = v + _apply_kernel(grid, system.inter_kernel, other, i)
        pots.append(v)
    return pots, dens


def _apply_kernel(grid, kernel, density, species):
    if kernel.kind == "contact":
        return kernel.strength * density
    table = kernel.table if species == 0 else kernel.table.T
    return grid.spacing * (table @ density)


def coupled_mean_field(system, orbitals, times, dt: float = 1e-3) -> ReferenceTrajectory:
    """Coupled Gross-Pitaevskii (bosons) / Hartree-Fock (fermions) dynamics.

    Bosonic species are condensed in one orbital, fermionic species occupy
    ``N`` orbitals.  Contact interactions between identical fermions vanish
    and are ignored.  Second-order Strang splitting: half potential kick,
    exact kinetic step in the box (or plane-wave) basis, half kick.  The trap
    is centred (post-quench dynamics).
    """
    grid = system.grid
    phis = []
    for s, k in zip(system.species, system.intra_kernels):
        if s.statistics == "fermion" and k.kind != "contact" and not k.is_zero:
            raise ValueError("finite-range fermionic interactions need exchange terms")
    for s, phi in zip(system.species, orbitals):
        want = 1 if s.statistics == "boson" else s.n_particles
        if phi.shape[0] != want:
            raise ValueError(f"{s.statistics} species needs {want} orbitals, got {phi.shape[0]}")
        phis.append(np.array(phi, dtype=complex))
    kinetic = [_kinetic_propagator(grid, s.mass, dt) for s in system.species]
    times = np.asarray(times, dtype=float)
    t = 0.0
    out_a, out_b, norms = [], [], []
    pots, dens = _mean_field_potentials(system, phis)
    for target in times:
        n_steps = int(round((target - t) / dt))
        for _ in range(n_steps):
            phis = [np.exp(-0.5j * dt * v) * p for v, p in zip(pots, phis)]
            phis = [k(p) for k, p in zip(kinetic, phis)]
            pots, dens = _mean_field_potentials(system, phis)
            phis = [np.exp(-0.5j * dt * v) * p for v, p in zip(pots, phis)]
        t += n_steps * dt
        pots, dens = _mean_field_potentials(system, phis)
        out_a.append(dens[0])
        out_b.append(dens[1])
        norms.append(float(grid.integrate(dens[0]) / system.species[0].n_particles))
    return ReferenceTrajectory(times, (np.array(out_a), np.array(out_b)),
                               np.full(len(times), np.nan), np.array(norms))


def two_particle_wavefunction(A, coefficients, orbitals, states) -> np.ndarray:
    """``Psi(x_A, x_B)`` of a one-plus-one particle variational state.

    ``states[s]`` lists the occupation vector of each SBS coefficient column;
    with one particle each column selects a single orbital.
    """
    spf = []
    for c, phi, occ in zip(coefficients, orbitals, states):
        occ = np.asarray(occ)
        if np.any(occ.sum(axis=1) != 1):
            raise ValueError("two_particle_wavefunction needs one particle per species")
        orb = np.argmax(occ, axis=1)
        spf.append(c @ phi[orb])
    return spf[0].T @ A @ spf[1]
