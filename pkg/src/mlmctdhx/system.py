"""Binary-mixture Hamiltonians, truncations and the variational state."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .fock import BOSON, FERMION, FockBasis, basis_size, enumerate_basis
from .grid import (Grid, InteractionKernel, OneBodyOperator, contact_kernel,
                   single_particle_hamiltonian)

SPECIES = ("A", "B")


@dataclass(frozen=True)
class Species:
    """One species of indistinguishable particles in a harmonic trap."""

    statistics: str
    n_particles: int
    mass: float = 1.0
    frequency: float = 1.0
    offset: float = 0.0
    g_intra: float = 0.0

    def __post_init__(self):
        if self.statistics not in (BOSON, FERMION):
            raise ValueError(f"unknown statistics {self.statistics!r}")
        if self.n_particles < 1:
            raise ValueError("each species needs at least one particle")
        if self.mass <= 0 or self.frequency <= 0:
            raise ValueError("mass and trap frequency must be positive")


@dataclass(frozen=True, eq=False)
class MixtureSystem:
    """Hamiltonian of a one-dimensional binary mixture on a grid.

    Contact interactions are built from ``Species.g_intra`` and ``g_inter``
    unless explicit kernels are passed.
    """

    grid: Grid
    species: tuple[Species, Species]
    g_inter: float = 0.0
    intra_kernels: tuple[InteractionKernel, InteractionKernel] | None = None
    inter_kernel: InteractionKernel | None = None

    def __post_init__(self):
        if self.intra_kernels is None:
            object.__setattr__(self, "intra_kernels",
                               tuple(contact_kernel(s.g_intra) for s in self.species))
        if self.inter_kernel is None:
            object.__setattr__(self, "inter_kernel", contact_kernel(self.g_inter))

    @cached_property
    def one_body(self) -> tuple[OneBodyOperator, OneBodyOperator]:
        return tuple(single_particle_hamiltonian(self.grid, s.mass, s.offset, s.frequency)
                     for s in self.species)

    def with_offsets(self, offset_a: float, offset_b: float) -> "MixtureSystem":
        sa, sb = self.species
        return replace(self, species=(replace(sa, offset=offset_a), replace(sb, offset=offset_b)))

    def quenched(self) -> "MixtureSystem":
        """The same mixture with both trap offsets set to zero."""
        return self.with_offsets(0.0, 0.0)

    @property
    def n_particles(self) -> tuple[int, int]:
        return tuple(s.n_particles for s in self.species)


@dataclass(frozen=True)
class Truncation:
    """Numbers of SBSs ``M`` and of orbitals ``(m_A, m_B)``."""

    n_sbs: int
    n_orbitals: tuple[int, int]

    @property
    def label(self) -> str:
        return f"{self.n_sbs}-({self.n_orbitals[0]},{self.n_orbitals[1]})"

    def bases(self, system: MixtureSystem) -> tuple[FockBasis, FockBasis]:
        return tuple(enumerate_basis(s.statistics, s.n_particles, m)
                     for s, m in zip(system.species, self.n_orbitals))

    def validate(self, system: MixtureSystem) -> None:
        g = system.grid.n_points
        sizes = []
        for name, s, m in zip(SPECIES, system.species, self.n_orbitals):
            if m < 1 or m > g:
                raise ValueError(f"species {name}: need 1 <= m <= G, got m={m}")
            if s.statistics == FERMION and m < s.n_particles:
                raise ValueError(
                    f"species {name}: {s.n_particles} fermions need m >= {s.n_particles}, got m={m}")
            sizes.append(basis_size(s.statistics, s.n_particles, m))
        if not 1 <= self.n_sbs <= min(sizes):
            raise ValueError(f"need 1 <= M <= min(K_A, K_B) = {min(sizes)}, got M={self.n_sbs}")

    def coefficient_count(self, system: MixtureSystem) -> int:
        ka, kb = (b.size for b in self.bases(system))
        return self.n_sbs**2 + self.n_sbs * (ka + kb)


@dataclass(frozen=True, eq=False)
class MixtureState:
    """Variational state ``sum_ij A_ij |psi^A_i> |psi^B_j>``.

    ``coefficients[s]`` holds the SBS coefficient rows of species ``s`` and
    ``orbitals[s]`` its orbitals as rows of grid values.
    """

    A: np.ndarray
    coefficients: tuple[np.ndarray, np.ndarray]
    orbitals: tuple[np.ndarray, np.ndarray]
    t: float = 0.0
    layout: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.layout is None:
            shapes = (self.A.shape,) + tuple(c.shape for c in self.coefficients) \
                + tuple(p.shape for p in self.orbitals)
            object.__setattr__(self, "layout", shapes)

    @property
    def n_sbs(self) -> int:
        return self.A.shape[0]

    def pack(self) -> np.ndarray:
        parts = (self.A,) + tuple(self.coefficients) + tuple(self.orbitals)
        return np.concatenate([np.ravel(p) for p in parts]).astype(complex)

    @classmethod
    def unpack(cls, y: np.ndarray, layout: tuple, t: float = 0.0) -> "MixtureState":
        parts = []
        start = 0
        for shape in layout:
            size = int(np.prod(shape))
            parts.append(y[start:start + size].reshape(shape))
            start += size
        return cls(parts[0], (parts[1], parts[2]), (parts[3], parts[4]), t, layout)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.A) ** 2))

    def with_time(self, t: float) -> "MixtureState":
        return replace(self, t=t)


def lowdin(rows: np.ndarray, metric: float = 1.0) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalisation of the rows of ``rows``."""
    s = metric * (rows.conj() @ rows.T)
    w, v = np.linalg.eigh(s)
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    return inv_sqrt.T @ rows


def gram_defect(rows: np.ndarray, metric: float = 1.0) -> float:
    s = metric * (rows.conj() @ rows.T)
    return float(np.max(np.abs(s - np.eye(s.shape[0]))))
