"""Equations of motion on the species, SBS and orbital layers and their
adaptive integration in real and imaginary time.

All three layers move in the gauge where the constraint operators vanish:
the time derivatives of the SBSs and of the orbitals are orthogonal to the
current SBSs and orbitals.  A layer whose basis already spans its full space
(``M == K`` or ``m == G``) does not move at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import DOP853, RK45

from .analysis import density_on_grid, natural_orbitals, natural_species, schmidt_layers
from .fock import FockBasis, enumerate_basis, transition_tensors
from .grid import lowest_eigenstates
from .system import MixtureState, MixtureSystem, Truncation, gram_defect, lowdin
from .tensors import (ParticleDensities, hamiltonian_matrix, one_body_density,
                      orbital_matrix_elements, sbs_matrix, species_densities,
                      transition_densities, inter_two_body_density, intra_integrals)

log = logging.getLogger(__name__)

SOLVERS = {"RK45": RK45, "DOP853": DOP853}


class PropagationError(RuntimeError):
    """Integration stopped; ``state`` is the last state that passed all checks."""

    def __init__(self, message: str, state: MixtureState, diagnostics: dict | None = None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics or {}


class ConvergenceError(RuntimeError):
    """Imaginary-time relaxation did not reach the energy criterion."""

    def __init__(self, message: str, state: MixtureState):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class RegularizationPolicy:
    """Exponential floor ``lambda -> lambda + epsilon * exp(-lambda / epsilon)``."""

    epsilon: float = 1e-8
    scheme: str = "exponential-floor"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("regularisation epsilon must be positive")
        if self.scheme != "exponential-floor":
            raise ValueError(f"unknown regularisation scheme {self.scheme!r}")


def regularized_inverse(rho: np.ndarray, policy: RegularizationPolicy = RegularizationPolicy()) -> np.ndarray:
    """Inverse of a Hermitian positive semidefinite matrix with floored eigenvalues.

    >>> regularized_inverse(np.diag([1.0, 0.0]), RegularizationPolicy(1e-10)).real.round()
    array([[1.e+00, 0.e+00],
           [0.e+00, 1.e+10]])
    """
    rho = np.asarray(rho)
    scale = max(1.0, float(np.max(np.abs(rho))))
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10 * scale:
        raise ValueError("regularized_inverse needs a Hermitian matrix")
    w, v = np.linalg.eigh(rho)
    eps = policy.epsilon
    # exp(-w/eps) overflows for clearly negative w; clipping keeps those modes at ~0 weight
    floored = w + eps * np.exp(np.minimum(-w / eps, 700.0))
    return (v / floored) @ v.conj().T


def needs_regularization(rho: np.ndarray, policy: RegularizationPolicy) -> bool:
    return bool(np.linalg.eigvalsh(rho)[0] < policy.epsilon)


@dataclass(frozen=True)
class PropagationConfig:
    """Settings of one real- or imaginary-time integration.

    ``t_final`` is absolute.  In imaginary time the run also stops once the
    energy changes by less than ``energy_tolerance`` per unit imaginary time
    between consecutive outputs.

    In real time the top layer is integrated in the frame whose global phase
    rotates with ``reference_energy`` (default: the energy of the initial
    state).  Observables do not depend on the global phase, but without the
    shift the integrator must resolve ``exp(-i E t)`` and its amplitude error
    shows up as norm drift.
    """

    t_final: float
    mode: str = "real"
    atol: float = 1e-8
    rtol: float = 1e-8
    first_step: float | None = None
    max_step: float = np.inf
    output_stride: float = 0.05
    method: str = "DOP853"
    regularization: RegularizationPolicy = field(default_factory=RegularizationPolicy)
    gram_threshold: float = 1e-8
    abort_factor: float = 100.0
    energy_tolerance: float = 1e-9
    n_layers: int = 0
    keep_states: bool = False
    reference_energy: float | None = None

    def __post_init__(self):
        if self.mode not in ("real", "imaginary"):
            raise ValueError(f"mode must be 'real' or 'imaginary', got {self.mode!r}")
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("tolerances must be positive")
        if not self.output_stride > 0:
            raise ValueError("output stride must be positive")
        if self.method not in SOLVERS:
            raise ValueError(f"unknown integrator {self.method!r}; choose from {sorted(SOLVERS)}")

    @property
    def imaginary(self) -> bool:
        return self.mode == "imaginary"


@dataclass(eq=False)
class Trajectory:
    """Observables sampled at the output times.

    ``populations`` are the NSF populations of species A; ``populations_b``
    those of species B (equal up to round-off for a pure state).
    ``orbital_populations[s]`` are the normalised NO populations and
    ``layers[s]`` (optional) the NSF-resolved densities ``lambda_k rho_k``.
    """

    times: np.ndarray
    energies: np.ndarray
    norms: np.ndarray
    populations: np.ndarray
    populations_b: np.ndarray
    orbital_populations: tuple[np.ndarray, np.ndarray]
    densities: tuple[np.ndarray, np.ndarray]
    gram_defects: np.ndarray
    gauge_residuals: np.ndarray
    final_state: MixtureState
    layers: tuple[np.ndarray, np.ndarray] | None = None
    states: list | None = None
    n_evaluations: int = 0
    n_regularized: int = 0
    next_step: float | None = None
    reference_energy: float = 0.0


def species_bases(system: MixtureSystem, state_or_orbitals) -> tuple[FockBasis, FockBasis]:
    orbitals = getattr(state_or_orbitals, "orbitals", state_or_orbitals)
    return tuple(enumerate_basis(s.statistics, s.n_particles, phi.shape[0])
                 for s, phi in zip(system.species, orbitals))


def rhs_top(A: np.ndarray, h_sbs: np.ndarray) -> np.ndarray:
    """``dA/dt = -i H A`` with ``H[iA, iB, jA, jB]`` or its flattened matrix."""
    h = h_sbs if h_sbs.ndim == 2 else sbs_matrix(h_sbs)
    return -1j * (h @ A.ravel()).reshape(A.shape)


def species_coupling(A_s: np.ndarray, weights_inv: np.ndarray, species_op: np.ndarray) -> np.ndarray:
    """Coefficient tensor ``K[i, j, r, t]`` of the SBS mean-field term.

    ``A_s[i, k]`` has the own SBS first and the partner SBS second;
    ``species_op[k, p, r, t]`` is the interaction conditioned on the partner
    going from ``p`` to ``k``.  ``K = sum_kp (E^-1 conj(A_s))[i, k] A_s[j, p] U[k, p]``.
    """
    left = weights_inv @ A_s.conj()
    x = np.tensordot(left, species_op, axes=([1], [0]))  # i p r t
    return np.tensordot(A_s, x, axes=([1], [1])).transpose(1, 0, 2, 3)


def rhs_species(basis: FockBasis, C: np.ndarray, h: np.ndarray, v: np.ndarray | None,
                coupling: np.ndarray | None, pair_field: np.ndarray | None = None) -> np.ndarray:
    """``dC/dt = -i (1 - P1) [(H_s + V_s) psi_i + sum_j K_ij psi_j]``.

    ``h`` and ``v`` are the one- and two-body orbital integrals of the species,
    ``coupling`` the tensor from :func:`species_coupling`.  ``pair_field`` may
    pass the precomputed two-body term ``(a_q a_k psi_i) V / 2``.
    """
    if C.shape[0] == basis.size:
        return np.zeros_like(C)
    y = basis.annihilate(C)  # j n t
    t = np.einsum("int,rt->inr", y, h)
    if coupling is not None:
        t = t + np.einsum("ijrt,jnt->inr", coupling, y, optimize=True)
    out = basis.create(t)
    if pair_field is not None:
        out = out + basis.create_pairs(pair_field)
    elif v is not None and basis.n_particles >= 2:
        z = basis.annihilate_pairs(C)
        m = h.shape[0]
        zv = (z.reshape(-1, m * m) @ (0.5 * v).reshape(m * m, m * m).T).reshape(z.shape)
        out = out + basis.create_pairs(zv)
    # projecting twice keeps the result orthogonal to the SBSs even when
    # their Gram defect has drifted up to the re-orthonormalisation threshold
    for _ in range(2):
        out = out - (out @ C.conj().T) @ C
    return -1j * out


def rhs_orbitals(system: MixtureSystem, s: int, orbitals, rho: ParticleDensities,
                 rho1_inv: np.ndarray) -> np.ndarray:
    """``dphi/dt = -i (1 - P2) [h phi_i + sum_p rho1^-1[i, p] G_p]``.

    ``G_p(x) = sum_s [sum_ql rho2[p, q, s, l] v^q_l(x)
    + sum_ql rho2_inter[p, q, s, l] w^q_l(x)] phi_s(x)``, where the
    potentials are generated by orbital products ``conj(phi_q) phi_l``.
    """
    grid = system.grid
    phi = orbitals[s]
    m, g = phi.shape
    if m == g:
        return np.zeros_like(phi)
    out = system.one_body[s].apply(phi)
    field_ = np.zeros((m, m, g), dtype=complex)
    kernel = system.intra_kernels[s]
    if not kernel.is_zero and rho.rho2_intra[s] is not None:
        pair = (phi.conj()[:, None, :] * phi[None, :, :]).reshape(m * m, g)
        r2 = rho.rho2_intra[s].transpose(0, 2, 1, 3).reshape(m * m, m * m)
        field_ += kernel.potential(grid, (r2 @ pair).reshape(m, m, g))
    inter = system.inter_kernel
    if not inter.is_zero:
        other = orbitals[1 - s]
        mo = other.shape[0]
        pair = (other.conj()[:, None, :] * other[None, :, :]).reshape(mo * mo, g)
        r2 = rho.rho2_inter_for(s).transpose(0, 2, 1, 3).reshape(m * m, mo * mo)
        field_ += inter.potential(grid, (r2 @ pair).reshape(m, m, g),
                                  on="first" if s == 0 else "second")
    gp = np.einsum("psx,sx->px", field_, phi)
    out = out + rho1_inv @ gp
    for _ in range(2):
        out = out - (grid.spacing * (out @ phi.conj().T)) @ phi
    return -1j * out


class _LayerData:
    """Everything that depends on the SBS coefficients and orbitals only."""

    def __init__(self, system: MixtureSystem, bases, coefficients, orbitals):
        self.system = system
        self.bases = bases
        self.coefficients = tuple(np.array(c) for c in coefficients)
        self.orbitals = tuple(np.array(p) for p in orbitals)

    def matches(self, coefficients, orbitals) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.coefficients, coefficients)) \
            and all(np.array_equal(a, b) for a, b in zip(self.orbitals, orbitals))

    @cached_property
    def tensors(self):
        return tuple(transition_tensors(c, b, two_body=not k.is_zero)
                     for c, b, k in zip(self.coefficients, self.bases, self.system.intra_kernels))

    @cached_property
    def integrals(self):
        """``(mats, h, v)``: SBS matrices of ``H_s + V_s`` and orbital integrals."""
        s = self.system
        mats, h_list, v_list = [], [], []
        for k in (0, 1):
            phi = self.orbitals[k]
            h = s.grid.spacing * phi.conj() @ s.one_body[k].apply(phi).T
            mat = np.tensordot(self.tensors[k].d1, h, axes=([2, 3], [0, 1]))
            v = None
            if self.pair_fields[k] is not None:
                v = intra_integrals(s.grid, s.intra_kernels[k], phi)
                z = self.tensors[k].pairs
                mat = mat + np.tensordot(z.conj(), self.pair_fields[k], axes=([1, 2, 3], [1, 2, 3]))
            mats.append(mat)
            h_list.append(h)
            v_list.append(v)
        return mats, h_list, v_list

    @cached_property
    def pair_fields(self):
        """``Z V / 2`` per species: the intra-species two-body operator applied
        to the annihilated pair amplitudes (None without intra interaction)."""
        out = []
        for k in (0, 1):
            z = self.tensors[k].pairs
            if z is None or self.system.intra_kernels[k].is_zero:
                out.append(None)
                continue
            m = z.shape[-1]
            v = intra_integrals(self.system.grid, self.system.intra_kernels[k], self.orbitals[k])
            out.append((z.reshape(-1, m * m) @ (0.5 * v).reshape(m * m, m * m).T).reshape(z.shape))
        return tuple(out)

    @cached_property
    def transition_densities(self):
        return tuple(transition_densities(t, p) for t, p in zip(self.tensors, self.orbitals))

    @cached_property
    def species_ops(self):
        s = self.system
        ops = []
        for k in (0, 1):
            pot = s.inter_kernel.potential(s.grid, self.transition_densities[1 - k],
                                           on="first" if k == 0 else "second")
            ops.append(orbital_matrix_elements(s.grid, self.orbitals[k], pot))
        return tuple(ops)

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        s = self.system
        mats = self.integrals[0]
        nsbs = mats[0].shape[0]
        eye = np.eye(nsbs)
        h = np.einsum("ac,bd->abcd", mats[0], eye) + np.einsum("ac,bd->abcd", eye, mats[1])
        if not s.inter_kernel.is_zero:
            da, db = self.transition_densities
            vb = s.inter_kernel.potential(s.grid, db, on="first")
            h = h + s.grid.spacing * np.tensordot(da, vb, axes=([2], [2])).transpose(0, 2, 1, 3)
        return h

    @cached_property
    def sbs_matrix(self) -> np.ndarray:
        return np.ascontiguousarray(sbs_matrix(self.hamiltonian))


class MixtureEquations:
    """Right-hand side of the coupled equations of motion for one system.

    Quantities that depend only on the SBSs and orbitals are cached between
    calls with identical arguments.
    """

    def __init__(self, system: MixtureSystem, bases: tuple[FockBasis, FockBasis],
                 regularization: RegularizationPolicy = RegularizationPolicy()):
        self.system = system
        self.bases = bases
        self.regularization = regularization
        self.n_evaluations = 0
        self.n_regularized = 0
        self.reference_energy = 0.0
        self._layer: _LayerData | None = None

    def layer(self, state: MixtureState) -> _LayerData:
        if self._layer is None or not self._layer.matches(state.coefficients, state.orbitals):
            self._layer = _LayerData(self.system, self.bases, state.coefficients, state.orbitals)
        return self._layer

    def hamiltonian(self, state: MixtureState) -> np.ndarray:
        return self.layer(state).hamiltonian

    def energy(self, state: MixtureState) -> float:
        a = state.A.ravel()
        h = self.layer(state).sbs_matrix
        return float((a.conj() @ h @ a).real / (a.conj() @ a).real)

    def _inverse(self, matrix):
        if needs_regularization(matrix, self.regularization):
            self.n_regularized += 1
            log.debug("regularising a near-singular density matrix")
        return regularized_inverse(matrix, self.regularization)

    def derivative(self, state: MixtureState, imaginary: bool = False) -> MixtureState:
        """Time derivative of every layer, packed as a :class:`MixtureState`."""
        self.n_evaluations += 1
        sysm = self.system
        layer = self.layer(state)
        A = state.A
        dA = rhs_top(A, layer.sbs_matrix)
        if imaginary:
            # -(H - E) A keeps the norm fixed to first order
            e = np.vdot(A, 1j * dA) / np.vdot(A, A)
            dA = -1j * dA + e.real * A
        elif self.reference_energy:
            # global phase frame rotating with the reference energy
            dA = dA + 1j * self.reference_energy * A

        nsbs = A.shape[0]
        need_c = [nsbs < b.size for b in self.bases]
        need_phi = [phi.shape[0] < sysm.grid.n_points for phi in state.orbitals]
        dC = [np.zeros_like(c) for c in state.coefficients]
        dphi = [np.zeros_like(p) for p in state.orbitals]
        if any(need_c) or any(need_phi):
            eta = species_densities(A / np.sqrt(np.vdot(A, A).real))
            mats, h_list, v_list = layer.integrals
            for s in (0, 1):
                if not need_c[s]:
                    continue
                coupling = None
                if not sysm.inter_kernel.is_zero:
                    a_s = A if s == 0 else A.T
                    a_s = a_s / np.linalg.norm(a_s)
                    inv = self._inverse(eta.weights(s))
                    coupling = species_coupling(a_s, inv, layer.species_ops[s])
                dC[s] = rhs_species(self.bases[s], state.coefficients[s], h_list[s], v_list[s],
                                    coupling, layer.pair_fields[s])
            if any(need_phi):
                t = layer.tensors
                rho1 = tuple(one_body_density(eta.weights(s), t[s]) for s in (0, 1))
                rho2 = tuple(t[s].two_body_density(eta.weights(s)) if t[s].pairs is not None else None
                             for s in (0, 1))
                inter = None
                if not sysm.inter_kernel.is_zero:
                    inter = inter_two_body_density(A / np.linalg.norm(A), t)
                rho = ParticleDensities(rho1, rho2, inter)
                for s in (0, 1):
                    if need_phi[s]:
                        dphi[s] = rhs_orbitals(sysm, s, state.orbitals, rho, self._inverse(rho1[s]))
        if imaginary:
            dC = [-1j * d for d in dC]
            dphi = [-1j * d for d in dphi]
        return MixtureState(dA, tuple(dC), tuple(dphi), state.t, state.layout)

    def gauge_residual(self, state: MixtureState, derivative: MixtureState) -> float:
        """Largest overlap of a basis derivative with the current basis."""
        res = 0.0
        for c, dc in zip(state.coefficients, derivative.coefficients):
            res = max(res, float(np.max(np.abs(c.conj() @ dc.T))))
        dx = self.system.grid.spacing
        for p, dp in zip(state.orbitals, derivative.orbitals):
            res = max(res, float(np.max(np.abs(dx * (p.conj() @ dp.T)))))
        return res

    def fun(self, layout, imaginary: bool = False):
        def f(t, y):
            state = MixtureState.unpack(y, layout, t)
            return self.derivative(state, imaginary).pack()
        return f


def normalize_state(state: MixtureState, dx: float, threshold: float = 1e-12) -> MixtureState:
    """Unit-norm ``A`` and Loewdin-orthonormalised SBSs and orbitals.

    Sets whose Gram defect is already below ``threshold`` are left untouched
    so that cached layer quantities stay valid.
    """
    A = state.A / np.linalg.norm(state.A)
    coeffs = tuple(lowdin(c) if gram_defect(c) > threshold else c for c in state.coefficients)
    orbs = tuple(lowdin(p, dx) if gram_defect(p, dx) > threshold else p for p in state.orbitals)
    return MixtureState(A, coeffs, orbs, state.t, state.layout)


def invariant_defects(state: MixtureState, dx: float) -> dict[str, float]:
    return {
        "norm": abs(state.norm() - 1.0),
        "sbs_gram": max(gram_defect(c) for c in state.coefficients),
        "orbital_gram": max(gram_defect(p, dx) for p in state.orbitals),
    }


class _Recorder:
    def __init__(self, eqs: MixtureEquations, config: PropagationConfig):
        self.eqs = eqs
        self.config = config
        self.rows = {k: [] for k in ("t", "E", "norm", "lam", "lam_b", "nA", "nB", "rhoA", "rhoB",
                                     "gram", "gauge", "layA", "layB")}
        self.states = [] if config.keep_states else None
        self._prev_nsf = None
        self._prev_no = [None, None]

    def __call__(self, state: MixtureState) -> float:
        eqs = self.eqs
        dx = eqs.system.grid.spacing
        r = self.rows
        e = eqs.energy(state)
        eta = species_densities(state.A)
        nsf = natural_species(eta.eta1[0], self._prev_nsf)
        self._prev_nsf = nsf.modes
        lam_b = np.sort(np.linalg.eigvalsh(eta.eta1[1]))[::-1]
        layer = eqs.layer(state)
        for s, key in ((0, "A"), (1, "B")):
            rho1 = one_body_density(eta.weights(s), layer.tensors[s])
            no = natural_orbitals(rho1, state.orbitals[s], previous=self._prev_no[s],
                                  grid=eqs.system.grid)
            self._prev_no[s] = no.modes
            r["n" + key].append(no.populations)
            r["rho" + key].append(density_on_grid(rho1, state.orbitals[s]))
        deriv = eqs.derivative(state, self.config.imaginary)
        eqs.n_evaluations -= 1
        r["t"].append(state.t)
        r["E"].append(e)
        r["norm"].append(state.norm())
        r["lam"].append(nsf.populations)
        r["lam_b"].append(lam_b)
        defects = invariant_defects(state, dx)
        r["gram"].append(max(defects["sbs_gram"], defects["orbital_gram"]))
        r["gauge"].append(eqs.gauge_residual(state, deriv))
        if self.config.n_layers:
            rec = schmidt_layers(state, eqs.bases)
            for s, key in ((0, "layA"), (1, "layB")):
                r[key].append(_fold_layers(rec.layers[s], self.config.n_layers))
        if self.states is not None:
            self.states.append(state)
        return e

    def trajectory(self, final_state: MixtureState) -> Trajectory:
        r = self.rows
        layers = None
        if self.config.n_layers:
            layers = (np.array(r["layA"]), np.array(r["layB"]))
        return Trajectory(
            times=np.array(r["t"]), energies=np.array(r["E"]), norms=np.array(r["norm"]),
            populations=np.array(r["lam"]), populations_b=np.array(r["lam_b"]),
            orbital_populations=(np.array(r["nA"]), np.array(r["nB"])),
            densities=(np.array(r["rhoA"]), np.array(r["rhoB"])),
            gram_defects=np.array(r["gram"]), gauge_residuals=np.array(r["gauge"]),
            final_state=final_state, layers=layers, states=self.states,
            n_evaluations=self.eqs.n_evaluations, n_regularized=self.eqs.n_regularized)


def _fold_layers(layers: np.ndarray, n: int) -> np.ndarray:
    """Keep the first ``n - 1`` layers and resum the rest into the last row."""
    if layers.shape[0] <= n:
        out = np.zeros((n, layers.shape[1]))
        out[:layers.shape[0]] = layers
        return out
    return np.vstack([layers[:n - 1], layers[n - 1:].sum(axis=0)])


def propagate(state: MixtureState, system: MixtureSystem, config: PropagationConfig,
              observer=None) -> Trajectory:
    """Integrate the equations of motion from ``state.t`` to ``config.t_final``.

    The integrator restarts at every output time.  There the invariants are
    checked: SBSs and orbitals are Loewdin-orthonormalised once their Gram
    defect exceeds ``gram_threshold``, and the run aborts with
    :class:`PropagationError` if any defect exceeds ``abort_factor`` times
    that.  In imaginary time the state is renormalised after every step.

    ``observer(state, step)`` is called at every output time, after
    recording; ``step`` is the trial step the integrator continues with.
    """
    if not config.t_final > state.t:
        raise ValueError(f"final time {config.t_final} must exceed the start time {state.t}")
    bases = species_bases(system, state)
    Truncation(state.n_sbs, tuple(p.shape[0] for p in state.orbitals)).validate(system)
    eqs = MixtureEquations(system, bases, config.regularization)
    if not config.imaginary:
        eqs.reference_energy = (config.reference_energy if config.reference_energy is not None
                                else eqs.energy(state))
    dx = system.grid.spacing
    layout = state.layout
    solver_cls = SOLVERS[config.method]
    fun = eqs.fun(layout, config.imaginary)
    tol = config.gram_threshold
    if config.imaginary:
        state = normalize_state(state, dx)
    recorder = _Recorder(eqs, config)
    e_prev = recorder(state)
    # scipy's automatic first-step guess overshoots badly for stiff imaginary-time runs
    step = config.first_step or min(1e-3, config.output_stride)
    if observer is not None:
        observer(state, step)
    t = state.t
    # scipy measures the RMS of the scaled local error; rescaling makes the
    # tolerances bound the Euclidean norm of the local error of the whole state
    scale = 1.0 / np.sqrt(state.pack().size)
    # output times sit on the absolute grid k * stride when the start time does,
    # so a run resumed at an output time visits bit-identical times
    stride = config.output_stride
    k0 = round(t / stride)
    origin = 0.0 if abs(t - k0 * stride) < 1e-9 * max(1.0, abs(t)) else t
    k0 = k0 if origin == 0.0 else 0
    n_out = int(np.ceil((config.t_final - t) / stride - 1e-9))
    for k in range(1, n_out + 1):
        t_next = origin + (k0 + k) * stride if k < n_out else config.t_final
        solver = solver_cls(fun, t, state.pack(), t_next, first_step=min(step, t_next - t),
                            max_step=config.max_step, rtol=config.rtol * scale,
                            atol=config.atol * scale)
        while solver.status == "running":
            message = solver.step()
            if solver.status == "failed":
                raise PropagationError(f"integrator failed at t={solver.t:.6g}: {message}",
                                       state, invariant_defects(state, dx))
            if config.imaginary and solver.status == "running":
                fixed = normalize_state(MixtureState.unpack(solver.y, layout, solver.t), dx)
                solver.y = fixed.pack()
                solver.f = solver.fun(solver.t, solver.y)
        step = getattr(solver, "h_abs", None) or None
        t = t_next
        new = MixtureState.unpack(solver.y.copy(), layout, t)
        defects = invariant_defects(new, dx)
        worst = max(defects["sbs_gram"], defects["orbital_gram"])
        if not config.imaginary and max(worst, defects["norm"]) > config.abort_factor * tol:
            raise PropagationError(
                f"invariant violation at t={t:.6g}: " + ", ".join(f"{k}={v:.2e}" for k, v in defects.items()),
                state, defects)
        if config.imaginary:
            new = normalize_state(new, dx)
        elif worst > tol:
            log.info("re-orthonormalising at t=%.4f (Gram defect %.2e)", t, worst)
            new = MixtureState(new.A, tuple(lowdin(c) for c in new.coefficients),
                               tuple(lowdin(p, dx) for p in new.orbitals), t, layout)
        state = new
        e = recorder(state)
        if observer is not None:
            observer(state, step)
        if config.imaginary:
            rate = abs(e - e_prev) / (recorder.rows["t"][-1] - recorder.rows["t"][-2])
            e_prev = e
            if rate < config.energy_tolerance:
                break
    traj = recorder.trajectory(state)
    traj.next_step = step
    traj.reference_energy = eqs.reference_energy
    return traj


def seed_state(system: MixtureSystem, truncation: Truncation, seed: int = 0,
               perturbation: float = 1e-3) -> MixtureState:
    """Starting point of the relaxation.

    Orbitals are the lowest eigenfunctions of each (offset) trap, the SBSs the
    first ``M`` number states (bosons condensed, fermions filling the lowest
    orbitals) and ``A`` is ``e_1 e_1^T``.  Every layer receives a random
    admixture of relative size ``perturbation`` from a fixed seed, followed by
    orthonormalisation, so the relaxation does not stall at symmetric saddle
    points.
    """
    truncation.validate(system)
    rng = np.random.default_rng(seed)
    grid = system.grid
    bases = truncation.bases(system)
    M = truncation.n_sbs

    # real noise keeps the relaxed state real: the Hamiltonian is real, so the
    # ground state carries no momentum that would shift the quench dynamics
    def noise(shape):
        return rng.standard_normal(shape)

    orbitals = []
    coeffs = []
    for s, (sp, m) in enumerate(zip(system.species, truncation.n_orbitals)):
        _, phi = lowest_eigenstates(grid, system.one_body[s], m)
        phi = phi.astype(complex)
        if m < grid.n_points:
            phi = phi + perturbation * noise(phi.shape) / np.sqrt(grid.n_points * grid.spacing)
        orbitals.append(lowdin(phi, grid.spacing))
        c = np.zeros((M, bases[s].size), dtype=complex)
        c[np.arange(M), np.arange(M)] = 1.0
        if M < bases[s].size:
            c = c + perturbation * noise(c.shape) / np.sqrt(bases[s].size)
        coeffs.append(lowdin(c))
    A = np.zeros((M, M), dtype=complex)
    A[0, 0] = 1.0
    if M > 1:
        A = A + perturbation * noise(A.shape) / M
    A = A / np.linalg.norm(A)
    return MixtureState(A, tuple(coeffs), tuple(orbitals), 0.0)


def relax(system: MixtureSystem, truncation: Truncation, config: PropagationConfig | None = None,
          seed: int = 0, initial: MixtureState | None = None, history: list | None = None) -> MixtureState:
    """Variational ground state by imaginary-time propagation.

    Stops once the energy changes by less than ``config.energy_tolerance``
    per unit imaginary time; ``config.t_final`` bounds the total imaginary
    time.  ``history``, if given, receives ``(tau, E)`` pairs.

    Raises
    ------
    ConvergenceError
        If the bound is reached before the energy criterion is met.
    """
    if config is None:
        config = PropagationConfig(t_final=100.0, mode="imaginary", output_stride=0.5)
    if not config.imaginary:
        raise ValueError("relax needs an imaginary-time configuration")
    state = initial if initial is not None else seed_state(system, truncation, seed)
    state = state.with_time(0.0)
    traj = propagate(state, system, config)
    if history is not None:
        history.extend(zip(traj.times.tolist(), traj.energies.tolist()))
    e = traj.energies
    dt = np.diff(traj.times)
    if len(e) < 2 or abs(e[-1] - e[-2]) / dt[-1] >= config.energy_tolerance:
        raise ConvergenceError(
            f"relaxation not converged after tau={traj.times[-1]:.3g} "
            f"(last energy change {abs(e[-1] - e[-2]) if len(e) > 1 else np.nan:.2e})",
            traj.final_state)
    return traj.final_state.with_time(0.0)


def quench(system: MixtureSystem, truncation: Truncation, relax_config: PropagationConfig | None,
           config: PropagationConfig, seed: int = 0, history: list | None = None) -> Trajectory:
    """Relax in the displaced traps, then propagate with the offsets set to zero."""
    ground = relax(system, truncation, relax_config, seed=seed, history=history)
    return propagate(ground, system.quenched(), config)


def state_energy(state: MixtureState, system: MixtureSystem) -> float:
    """Energy of ``state`` through the full Hamiltonian-matrix construction."""
    bases = species_bases(system, state)
    tensors = tuple(transition_tensors(c, b, two_body=not k.is_zero)
                    for c, b, k in zip(state.coefficients, bases, system.intra_kernels))
    h = hamiltonian_matrix(system.grid, state.orbitals, system.intra_kernels,
                           system.inter_kernel, system.one_body, tensors)
    a = state.A.ravel()
    return float((a.conj() @ sbs_matrix(h) @ a).real)
