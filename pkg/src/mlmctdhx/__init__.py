"""Multilayer multiconfiguration time-dependent Hartree method for binary
mixtures of bosons and/or fermions in one dimension."""

from .analysis import (center_of_mass, classify_orbitals, density_difference,
                       natural_orbitals, natural_species, population_difference,
                       schmidt_layers, total_energy)
from .eom import (MixtureEquations, PropagationConfig, PropagationError, RegularizationPolicy,
                  Trajectory, propagate, quench, regularized_inverse, relax, seed_state)
from .fock import BOSON, FERMION, FockBasis, enumerate_basis, transition_tensors
from .grid import Grid, build_grid, contact_kernel, harmonic_potential, kinetic_operator
from .system import MixtureState, MixtureSystem, Species, Truncation

__version__ = "0.1.0"

__all__ = [
    "BOSON", "FERMION", "FockBasis", "Grid", "MixtureEquations", "MixtureState", "MixtureSystem",
    "PropagationConfig", "PropagationError", "RegularizationPolicy", "Species", "Trajectory",
    "Truncation", "build_grid", "center_of_mass", "classify_orbitals", "contact_kernel",
    "density_difference", "enumerate_basis", "harmonic_potential", "kinetic_operator",
    "natural_orbitals", "natural_species", "population_difference", "propagate", "quench",
    "regularized_inverse", "relax", "schmidt_layers", "seed_state", "total_energy",
    "transition_tensors",
]
