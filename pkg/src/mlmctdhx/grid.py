"""Uniform spatial grids, one-body operators and two-body interaction kernels.

Everything is expressed in harmonic-oscillator units (hbar = mass = omega = 1
unless a species carries a different mass).  Grid functions are stored as
plain complex arrays whose last axis runs over the grid points; the
quadrature inner product is ``dx * sum(conj(f) * g)``.

The default kinetic energy is the sine DVR of a hard-wall box.  The grid
points include the endpoints ``-L`` and ``+L``; the walls of the box sit one
spacing further out, at ``+-(L + dx)``, so that every grid point is an
interior DVR point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

MIN_POINTS = 8


@dataclass(frozen=True)
class Grid:
    """Uniform one-dimensional grid symmetric about the origin.

    Parameters
    ----------
    half_width : float
        Half extent ``L`` of the sampled interval.
    n_points : int
        Number of grid points ``G``.
    periodic : bool
        If True the grid is periodic with spacing ``2L/G`` and the point
        ``+L`` is identified with ``-L``.  Otherwise the points include both
        endpoints and the spacing is ``2L/(G-1)``.
    """

    half_width: float
    n_points: int
    periodic: bool = False

    @cached_property
    def spacing(self) -> float:
        if self.periodic:
            return 2.0 * self.half_width / self.n_points
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        x = -self.half_width + self.spacing * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @property
    def wall(self) -> float:
        """Half width of the hard-wall box used by the sine DVR."""
        return self.half_width + self.spacing

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Quadrature inner product over the last axis."""
        return self.spacing * np.sum(np.conj(f) * g, axis=-1)

    def overlap(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Overlap matrix ``S[i, j] = <f_i|g_j>`` of two stacks of grid functions."""
        return self.spacing * (np.conj(f) @ np.asarray(g).T)

    def integrate(self, f: np.ndarray) -> np.ndarray:
        return self.spacing * np.sum(f, axis=-1)


def build_grid(half_width: float, n_points: int, periodic: bool = False) -> Grid:
    """Construct a validated :class:`Grid`.

    >>> build_grid(4.0, 8).spacing
    1.1428571428571428
    """
    if not np.isfinite(half_width) or half_width <= 0:
        raise ValueError(f"grid half width must be positive, got {half_width!r}")
    if int(n_points) != n_points or n_points < MIN_POINTS:
        raise ValueError(f"grid needs an integer number of points >= {MIN_POINTS}, got {n_points!r}")
    return Grid(float(half_width), int(n_points), bool(periodic))


@dataclass(frozen=True)
class OneBodyOperator:
    """A one-body operator on the grid.

    Kinetic energies carry a dense ``matrix``; potentials carry a
    ``diagonal``.  Sums of the two are ``composite`` operators holding both.
    """

    kind: str
    matrix: np.ndarray | None = None
    diagonal: np.ndarray | None = None

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Act on grid functions stacked along the leading axes of ``f``."""
        out = np.zeros(np.shape(f), dtype=np.result_type(f, complex))
        if self.matrix is not None:
            out += f @ self.matrix.T
        if self.diagonal is not None:
            out += self.diagonal * f
        return out

    def dense(self) -> np.ndarray:
        n = self.matrix.shape[0] if self.matrix is not None else self.diagonal.shape[0]
        out = np.zeros((n, n))
        if self.matrix is not None:
            out = out + self.matrix
        if self.diagonal is not None:
            out = out + np.diag(self.diagonal)
        return out

    def __add__(self, other: "OneBodyOperator") -> "OneBodyOperator":
        matrix = _add_optional(self.matrix, other.matrix)
        diagonal = _add_optional(self.diagonal, other.diagonal)
        if matrix is None:
            kind = "potential"
        elif diagonal is None:
            kind = "kinetic"
        else:
            kind = "composite"
        return OneBodyOperator(kind, matrix, diagonal)


def _add_optional(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def kinetic_operator(grid: Grid, mass: float = 1.0) -> OneBodyOperator:
    """Kinetic energy ``-(1/2 mass) d^2/dx^2`` in the grid's DVR.

    For the hard-wall grid this is the sine DVR, built from its exact
    eigen-decomposition, so the box modes ``sin(k pi (x + a) / 2a)`` with
    ``a = grid.wall`` are eigenvectors with eigenvalues
    ``(k pi / 2a)^2 / (2 mass)``.  The periodic grid uses the Fourier
    (periodic sinc) DVR.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    g = grid.n_points
    if grid.periodic:
        k = 2.0 * np.pi * np.fft.fftfreq(g, d=grid.spacing)
        if g % 2 == 0:
            # the Nyquist mode is symmetrised so that T stays real
            k[g // 2] = np.pi / grid.spacing
        modes = np.exp(1j * np.outer(grid.points, k)) / np.sqrt(g)
        t = (modes * (k**2 / (2.0 * mass))) @ modes.conj().T
        t = t.real
    else:
        idx = np.arange(1, g + 1)
        modes = np.sqrt(2.0 / (g + 1)) * np.sin(np.pi * np.outer(idx, idx) / (g + 1))
        energies = (idx * np.pi / (2.0 * grid.wall)) ** 2 / (2.0 * mass)
        t = (modes * energies) @ modes.T
    t = 0.5 * (t + t.T)
    t.setflags(write=False)
    return OneBodyOperator("kinetic", matrix=t)


def harmonic_potential(grid: Grid, offset: float = 0.0, frequency: float = 1.0,
                       mass: float = 1.0) -> OneBodyOperator:
    """Diagonal trap ``mass * omega^2 (x - offset)^2 / 2``."""
    v = 0.5 * mass * frequency**2 * (grid.points - offset) ** 2
    v.setflags(write=False)
    return OneBodyOperator("potential", diagonal=v)


def single_particle_hamiltonian(grid: Grid, mass: float = 1.0, offset: float = 0.0,
                                frequency: float = 1.0) -> OneBodyOperator:
    return kinetic_operator(grid, mass) + harmonic_potential(grid, offset, frequency, mass)


def lowest_eigenstates(grid: Grid, h: OneBodyOperator, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``count`` eigenpairs of a one-body operator.

    Returns energies and eigenfunctions as rows normalised under the grid
    quadrature, with the sign fixed so the first non-negligible lobe is
    positive.
    """
    e, v = np.linalg.eigh(h.dense())
    phi = v[:, :count].T / np.sqrt(grid.spacing)
    for row in phi:
        lead = np.flatnonzero(np.abs(row) > 1e-6 * np.abs(row).max())[0]
        if row[lead] < 0:
            row *= -1
    return e[:count], phi


@dataclass(frozen=True)
class InteractionKernel:
    """Two-body interaction ``w(x, y)`` sampled on a grid.

    ``contact`` kernels represent ``g * delta(x - y)`` as the diagonal table
    ``g * delta_ij / dx``.  ``tabulated`` kernels carry an explicit ``G x G``
    table ``w(x_i, y_j)``; the first argument belongs to the particle the
    resulting potential acts on.
    """

    kind: str
    strength: float = 0.0
    table: np.ndarray | None = None

    @property
    def is_zero(self) -> bool:
        if self.kind == "contact":
            return self.strength == 0.0
        return not np.any(self.table)

    def dense(self, grid: Grid) -> np.ndarray:
        if self.kind == "contact":
            return self.strength * np.eye(grid.n_points) / grid.spacing
        return np.asarray(self.table)

    def potential(self, grid: Grid, density: np.ndarray, on: str = "first") -> np.ndarray:
        """Potential felt by a particle, generated by a (transition) density.

        ``on="first"`` returns ``dx * sum_y w(x, y) f(y)``; ``on="second"``
        returns ``dx * sum_x w(x, y) f(x)``.  Works on stacks of densities
        along leading axes.
        """
        if self.kind == "contact":
            return self.strength * density
        w = self.table if on == "first" else self.table.T
        return grid.spacing * (density @ w.T)

    def pair_integrals(self, grid: Grid, phi_x: np.ndarray, phi_y: np.ndarray) -> np.ndarray:
        """Integrals ``W[r, s, u, v] = <phi_x_r phi_y_u | w | phi_x_s phi_y_v>``.

        Particle one lives in ``phi_x`` (indices r, s), particle two in
        ``phi_y`` (indices u, v).
        """
        dx = grid.spacing
        mx, my = phi_x.shape[0], phi_y.shape[0]
        pair_x = (phi_x.conj()[:, None, :] * phi_x[None, :, :]).reshape(mx * mx, -1)
        pair_y = (phi_y.conj()[:, None, :] * phi_y[None, :, :]).reshape(my * my, -1)
        pot = self.potential(grid, pair_y, on="first")
        return (dx * (pair_x @ pot.T)).reshape(mx, mx, my, my)


def contact_kernel(strength: float) -> InteractionKernel:
    return InteractionKernel("contact", float(strength))


def tabulated_kernel(table: np.ndarray) -> InteractionKernel:
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ValueError("interaction table must be square")
    return InteractionKernel("tabulated", 0.0, table)
