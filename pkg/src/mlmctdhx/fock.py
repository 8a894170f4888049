"""Occupation-number bases, second-quantization phase factors and reduced
one- and two-body transition matrices between species basis states.

Orbital indices are zero based throughout.  Number states are ordered
lexicographically descending, e.g. ``(2,0), (1,1), (0,2)`` for two bosons in
two orbitals.  Fermionic number states are built by applying creation
operators in ascending orbital order to the vacuum, which fixes every sign.

The transition matrices are evaluated through the intermediate bases with
one and two particles removed::

    <psi_i| a+_k a_q |psi_j> = sum_n Q_n(k, q) conj(C[i, n+k]) C[j, n+q]
    <psi_i| a+_k a+_q a_q' a_k' |psi_j>
        = sum_n P_n(k, q) P_n(k', q') conj(C[i, n+k+q]) C[j, n+k'+q']

where ``n`` runs over the (N-1)- respectively (N-2)-particle states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

BOSON = "boson"
FERMION = "fermion"
STATISTICS = (BOSON, FERMION)


def _check_statistics(statistics: str) -> str:
    if statistics not in STATISTICS:
        raise ValueError(f"statistics must be 'boson' or 'fermion', got {statistics!r}")
    return statistics


def basis_size(statistics: str, n_particles: int, n_orbitals: int) -> int:
    if _check_statistics(statistics) == BOSON:
        return comb(n_particles + n_orbitals - 1, n_orbitals - 1)
    return comb(n_orbitals, n_particles)


def _occupations(n: int, m: int, cap: int) -> list[tuple[int, ...]]:
    if m == 1:
        return [(n,)] if n <= cap else []
    out = []
    for first in range(min(n, cap), -1, -1):
        out.extend((first,) + rest for rest in _occupations(n - first, m - 1, cap))
    return out


@dataclass(frozen=True, eq=False)
class FockBasis:
    """All number states of ``n_particles`` in ``n_orbitals`` orbitals."""

    statistics: str
    n_particles: int
    n_orbitals: int
    states: np.ndarray = field(repr=False)
    lookup: dict = field(repr=False)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index(self, occupation) -> int:
        return self.lookup[tuple(int(v) for v in occupation)]

    def __len__(self) -> int:
        return self.size

    @cached_property
    def removed_one(self) -> "FockBasis":
        return enumerate_basis(self.statistics, self.n_particles - 1, self.n_orbitals)

    @cached_property
    def removed_two(self) -> "FockBasis":
        return enumerate_basis(self.statistics, self.n_particles - 2, self.n_orbitals)

    @cached_property
    def single_map(self) -> tuple[np.ndarray, np.ndarray]:
        """Index of ``n + k`` for each (N-1)-state ``n`` and orbital ``k``.

        Returns ``(targets, factors)`` of shape ``(K1, m)``.  ``factors`` holds
        the amplitude of ``a_k |n + k>`` on ``|n>``; invalid targets point to
        the padding index ``K`` with zero factor.  The product
        ``factors[n, k] * factors[n, q]`` equals ``Q_n(k, q)``.
        """
        lower = self.removed_one
        m = self.n_orbitals
        targets = np.full((lower.size, m), self.size, dtype=np.intp)
        factors = np.zeros((lower.size, m))
        for a, occ in enumerate(lower.states):
            for k in range(m):
                raised = occ.copy()
                raised[k] += 1
                idx = self.lookup.get(tuple(raised))
                if idx is None:
                    continue
                targets[a, k] = idx
                if self.statistics == BOSON:
                    factors[a, k] = np.sqrt(occ[k] + 1.0)
                else:
                    factors[a, k] = -1.0 if occ[:k].sum() % 2 else 1.0
        return targets, factors

    @cached_property
    def pair_map(self) -> tuple[np.ndarray, np.ndarray]:
        """Index of ``n + k + q`` and ``P_n(k, q)`` for each (N-2)-state."""
        lower = self.removed_two
        m = self.n_orbitals
        targets = np.full((lower.size, m, m), self.size, dtype=np.intp)
        factors = np.zeros((lower.size, m, m))
        for a, occ in enumerate(lower.states):
            for k in range(m):
                for q in range(m):
                    raised = occ.copy()
                    raised[k] += 1
                    raised[q] += 1
                    idx = self.lookup.get(tuple(raised))
                    if idx is None:
                        continue
                    targets[a, k, q] = idx
                    factors[a, k, q] = phase_P(occ, k, q, self.statistics)
        return targets, factors

    @cached_property
    def single_scatter(self) -> sp.csr_matrix:
        """Sparse ``(K, K1*m)`` map sending ``T[n, k]`` to ``sum a+_k``-images."""
        targets, factors = self.single_map
        return _scatter_matrix(targets, factors, self.size)

    @cached_property
    def pair_scatter(self) -> sp.csr_matrix:
        targets, factors = self.pair_map
        return _scatter_matrix(targets, factors, self.size)

    def annihilate(self, coefficients: np.ndarray) -> np.ndarray:
        """``Y[i, n, k] = (a_k psi_i)[n]`` for rows ``psi_i`` of ``coefficients``."""
        targets, factors = self.single_map
        padded = _pad(coefficients)
        return padded[:, targets] * factors

    def annihilate_pairs(self, coefficients: np.ndarray) -> np.ndarray:
        """``Z[i, n, k, q] = (a_q a_k psi_i)[n]``."""
        targets, factors = self.pair_map
        padded = _pad(coefficients)
        return padded[:, targets] * factors

    def create(self, amplitudes: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`annihilate`: ``sum_{n,k} T[i,n,k] a+_k |n>``."""
        flat = amplitudes.reshape(amplitudes.shape[0], -1)
        return np.asarray((self.single_scatter @ flat.T).T)

    def create_pairs(self, amplitudes: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`annihilate_pairs`: ``sum T[i,n,k,q] a+_k a+_q |n>``."""
        flat = amplitudes.reshape(amplitudes.shape[0], -1)
        return np.asarray((self.pair_scatter @ flat.T).T)


def _pad(coefficients: np.ndarray) -> np.ndarray:
    c = np.atleast_2d(coefficients)
    return np.concatenate([c, np.zeros((c.shape[0], 1), dtype=c.dtype)], axis=1)


def _scatter_matrix(targets: np.ndarray, factors: np.ndarray, size: int) -> sp.csr_matrix:
    rows = targets.ravel()
    vals = factors.ravel()
    cols = np.arange(rows.size)
    keep = rows < size
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, rows.size))


_BASIS_CACHE: dict[tuple[str, int, int], FockBasis] = {}


def enumerate_basis(statistics: str, n_particles: int, n_orbitals: int) -> FockBasis:
    """Enumerate the number states of one species.

    States are ordered lexicographically descending.  Results are cached, so
    repeated calls return the same (immutable) object.

    Raises
    ------
    ValueError
        For unknown statistics, negative counts, or fermions with fewer
        orbitals than particles.
    """
    _check_statistics(statistics)
    if n_particles < 0 or n_orbitals < 1:
        raise ValueError("need n_particles >= 0 and n_orbitals >= 1")
    if statistics == FERMION and n_orbitals < n_particles:
        raise ValueError(
            f"{n_particles} fermions need at least as many orbitals, got {n_orbitals}")
    key = (statistics, int(n_particles), int(n_orbitals))
    if key not in _BASIS_CACHE:
        cap = n_particles if statistics == BOSON else 1
        occ = _occupations(n_particles, n_orbitals, cap)
        states = np.array(occ, dtype=np.int64).reshape(len(occ), n_orbitals)
        states.setflags(write=False)
        lookup = {tuple(int(v) for v in s): i for i, s in enumerate(states)}
        _BASIS_CACHE[key] = FockBasis(statistics, int(n_particles), int(n_orbitals), states, lookup)
    return _BASIS_CACHE[key]


def _check_orbitals(n, k: int, q: int) -> None:
    m = len(n)
    if not (0 <= k < m and 0 <= q < m):
        raise IndexError(f"orbital indices ({k}, {q}) out of range for {m} orbitals")


def _between(n, k: int, q: int) -> int:
    lo, hi = min(k, q), max(k, q)
    return int(np.sum(n[lo + 1:hi]))


def phase_Q(n, k: int, q: int, statistics: str) -> float:
    """One-body factor ``Q_n(k, q)`` for an (N-1)-particle vector ``n``.

    Bosons: ``sqrt((n_k + 1)(n_q + 1))``.  Fermions: ``(-1)**d`` with ``d`` the
    number of particles strictly between orbitals ``k`` and ``q``.
    """
    _check_statistics(statistics)
    n = np.asarray(n)
    _check_orbitals(n, k, q)
    if statistics == BOSON:
        return float(np.sqrt((n[k] + 1.0) * (n[q] + 1.0)))
    return -1.0 if _between(n, k, q) % 2 else 1.0


def phase_P(n, k: int, q: int, statistics: str) -> float:
    """Two-body factor ``P_n(k, q)`` for an (N-2)-particle vector ``n``.

    Bosons: ``sqrt((n_k + 1 + delta_kq)(n_q + 1))``.  Fermions:
    ``(1 - delta_kq) (-1)**(d + theta)`` with ``theta = 1`` iff ``k > q``.
    """
    _check_statistics(statistics)
    n = np.asarray(n)
    _check_orbitals(n, k, q)
    if statistics == BOSON:
        return float(np.sqrt((n[k] + 1.0 + (k == q)) * (n[q] + 1.0)))
    if k == q:
        return 0.0
    return -1.0 if (_between(n, k, q) + (k > q)) % 2 else 1.0


@dataclass(frozen=True, eq=False)
class TransitionTensors:
    """Reduced transition matrices between the SBSs of one species.

    ``d1[i, j, k, q] = <psi_i| a+_k a_q |psi_j>``.  The two-body tensor is kept
    in factorised form ``pairs[i, n, k, q] = (a_q a_k psi_i)[n]``; the dense
    ``d2[i, j, k, q, q', k'] = <psi_i| a+_k a+_q a_q' a_k' |psi_j>`` is built on
    demand.
    """

    d1: np.ndarray
    pairs: np.ndarray | None = None

    @cached_property
    def d2(self) -> np.ndarray:
        m = self.d1.shape[-1]
        nsbs = self.d1.shape[0]
        if self.pairs is None:
            return np.zeros((nsbs,) * 2 + (m,) * 4, dtype=complex)
        z = self.pairs
        d = np.tensordot(z.conj(), z, axes=([1], [1]))  # i k q j k' q'
        return d.transpose(0, 3, 1, 2, 5, 4)

    def two_body_matrix(self, v: np.ndarray) -> np.ndarray:
        """``X[i, j] = sum v[k, q, k', q'] <psi_i| a+_k a+_q a_q' a_k' |psi_j>``."""
        nsbs = self.d1.shape[0]
        if self.pairs is None:
            return np.zeros((nsbs, nsbs), dtype=complex)
        z = self.pairs
        m = z.shape[-1]
        zv = (z.reshape(-1, m * m) @ v.reshape(m * m, m * m).T).reshape(z.shape)
        return np.tensordot(z.conj(), zv, axes=([1, 2, 3], [1, 2, 3]))

    def two_body_density(self, weights: np.ndarray) -> np.ndarray:
        """``rho[k, q, u, v] = sum_ij weights[i, j] <psi_i| a+_k a+_q a_v a_u |psi_j>``."""
        m = self.d1.shape[-1]
        if self.pairs is None:
            return np.zeros((m,) * 4, dtype=complex)
        z = self.pairs
        zw = np.tensordot(weights, z, axes=([1], [0]))
        return np.tensordot(z.conj(), zw, axes=([0, 1], [0, 1]))


def transition_tensors(coefficients: np.ndarray, basis: FockBasis,
                       two_body: bool = True) -> TransitionTensors:
    """Reduced one- and two-body transition matrices of a set of SBSs.

    Parameters
    ----------
    coefficients : (M, K) array
        Rows are the SBS coefficient vectors in ``basis`` order.
    basis : FockBasis
    two_body : bool
        Whether to build the (factorised) two-body tensor.  Not needed for
        species without intra-species interaction.
    """
    c = np.atleast_2d(np.asarray(coefficients))
    if c.shape[1] != basis.size:
        raise ValueError(
            f"coefficient matrix has {c.shape[1]} columns but the basis has {basis.size} states")
    if basis.n_particles == 0:
        m = basis.n_orbitals
        return TransitionTensors(np.zeros((c.shape[0],) * 2 + (m, m), dtype=complex))
    y = basis.annihilate(c)
    d1 = np.tensordot(y.conj(), y, axes=([1], [1])).transpose(0, 2, 1, 3)
    pairs = None
    if two_body and basis.n_particles >= 2:
        pairs = basis.annihilate_pairs(c)
    return TransitionTensors(d1, pairs)
