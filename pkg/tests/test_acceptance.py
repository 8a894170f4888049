"""Acceptance suite: eight criteria, one PASS/FAIL line each.

The scenario simulations take about an hour on one core; they are marked
``slow`` (deselect with ``-m "not slow"``) but run by default.  Trajectories
are shared between criteria through the caches in ``scenario_runs``.
"""

import numpy as np
import pytest
from scipy.signal import argrelmax, argrelmin

import scenario_runs as runs
from conftest import ACCEPTANCE, mixture
from mlmctdhx.analysis import density_difference, population_difference
from mlmctdhx.eom import PropagationConfig, propagate, relax, state_energy
from mlmctdhx.fock import BOSON, FERMION, basis_size, enumerate_basis, transition_tensors
from mlmctdhx.oracle import coupled_mean_field, dense_transition_matrices, exact_two_particle
from mlmctdhx.system import MixtureState, Truncation

T = runs.PERIOD


def verdict(label: str, ok: bool, detail: str) -> None:
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def conservation_runs():
    return [
        runs.bose_fermi_small_run(8, 10),
        runs.bose_fermi_small_run(8, 8),
        runs.bose_fermi_small_run(7, 10),
        runs.bose_fermi_small_run(7, 8),
        runs.impurity_run(0.5),
        runs.impurity_run(2.0),
        runs.impurity_run(0.5, mean_field=True),
        runs.impurity_run(2.0, mean_field=True),
        runs.fermi_fermi_run(0.2),
        runs.fermi_fermi_run(0.4),
        runs.fermi_fermi_run(1.0),
        runs.fermi_fermi_run(0.4, hartree_fock=True),
    ]


def centre_of_mass(run) -> np.ndarray:
    x = run.grid.points
    n = run.system.n_particles
    total = sum(run.grid.integrate(d * x) for d in run.traj.densities)
    return total / sum(n)


def species_centre(run, s: int) -> np.ndarray:
    return run.grid.integrate(run.traj.densities[s] * run.grid.points) / run.system.n_particles[s]


def max_delta(run_c, run_ref, t_max: float) -> float:
    keep = run_c.traj.times <= t_max + 1e-9
    assert np.allclose(run_c.traj.times[keep], run_ref.traj.times[keep])
    out = 0.0
    for s, n in enumerate(run_c.system.n_particles):
        d = density_difference(run_c.traj.densities[s][keep], run_ref.traj.densities[s][keep], n, run_c.grid)
        out = max(out, float(np.max(d)))
    return out


@pytest.mark.slow
def test_1_conservation():
    worst_norm, worst_energy, names = 0.0, 0.0, []
    for run in conservation_runs():
        tr = run.traj
        assert tr.times[-1] >= runs.CONSERVATION_TIME - 1e-9
        dn = float(np.max(np.abs(tr.norms - 1.0)))
        de = float(np.max(np.abs(tr.energies - tr.energies[0])) / abs(tr.energies[0]))
        worst_norm, worst_energy = max(worst_norm, dn), max(worst_energy, de)
        if dn > 1e-8 or de > 1e-6:
            names.append(run.label)
    verdict("1 (conservation)", not names,
            f"{len(conservation_runs())} runs to t=20: max |norm-1| {worst_norm:.1e} (<=1e-8), "
            f"max rel. energy drift {worst_energy:.1e} (<=1e-6)" + (f"; violated by {names}" if names else ""))


@pytest.mark.slow
def test_2_schmidt_symmetry():
    worst, bad = 0.0, []
    for run in conservation_runs():
        tr = run.traj
        # continuity ordering may permute near-degenerate populations, so compare spectra
        d = float(np.max(np.abs(np.sort(tr.populations, axis=1) - np.sort(tr.populations_b, axis=1))))
        worst = max(worst, d)
        if d > 1e-10:
            bad.append(run.label)
    verdict("2 (Schmidt symmetry)", not bad,
            f"max |sorted lambda^A - sorted lambda^B| {worst:.1e} over every output (<=1e-10)"
            + (f"; violated by {bad}" if bad else ""))


@pytest.mark.slow
def test_3_mean_field_limit():
    worst = {}
    for run in (runs.impurity_run(2.0, mean_field=True), runs.fermi_fermi_run(0.4, hartree_fock=True)):
        keep = run.traj.times <= 10.0 + 1e-9
        ref = coupled_mean_field(run.system.quenched(), run.ground.orbitals, run.traj.times[keep], dt=5e-4)
        worst[run.label] = max(
            float(np.max(density_difference(run.traj.densities[s][keep], ref.densities[s], n, run.grid)))
            for s, n in enumerate(run.system.n_particles))
    ok = all(v < 1e-4 for v in worst.values())
    verdict("3 (mean-field limit)", ok,
            "max Delta vs split-step solver, t<=10: "
            + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<1e-4)")


@pytest.mark.slow
def test_4_full_configuration_limit():
    sysm = mixture(BOSON, FERMION, n=(1, 1), g=(0, 0), g_ab=1.0, offsets=(1.0, -1.0), L=6.0, G=48)
    g, dx = sysm.grid.n_points, sysm.grid.spacing
    times = np.arange(0, 201) * 0.05
    ref = exact_two_particle(sysm, times)
    # complete truncation: one grid point per orbital, one orbital per SBS
    eye = np.eye(g, dtype=complex)
    state = MixtureState(ref.initial.vector.reshape(g, g).astype(complex), (eye, eye.copy()),
                         (eye / np.sqrt(dx), eye / np.sqrt(dx)))
    e0 = abs(state_energy(state, sysm) - ref.initial.energy)
    traj = propagate(state, sysm.quenched(), PropagationConfig(10.0, output_stride=0.05))
    e1 = float(np.max(np.abs(traj.energies - ref.energies)))
    delta = max(float(np.max(density_difference(traj.densities[s], ref.densities[s], 1, sysm.grid)))
                for s in (0, 1))
    verdict("4 (full-CI limit)", delta < 1e-3 and e0 < 1e-8 and e1 < 1e-8,
            f"1+1 at G=48, {g}-({g},{g}): max Delta {delta:.1e} (<1e-3), "
            f"initial energy error {e0:.1e}, post-quench {e1:.1e} (<1e-8)")


def all_bases_up_to(k_max: int):
    for stat in (BOSON, FERMION):
        for n in range(1, 9):
            for m in range(1, 11):
                if (stat == FERMION and m < n) or basis_size(stat, n, m) > k_max:
                    continue
                yield stat, n, m


def test_5_transition_matrices():
    worst, count = 0.0, 0
    rng = np.random.default_rng(5)
    for stat, n, m in all_bases_up_to(100):
        basis = enumerate_basis(stat, n, m)
        k = basis.size
        c = np.linalg.qr(rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k)))[0].T[:min(3, k)]
        t = transition_tensors(c, basis)
        d1, d2 = dense_transition_matrices(c, basis.states, stat, m)
        worst = max(worst, float(np.abs(t.d1 - d1).max()), float(np.abs(t.d2 - d2).max()))
        count += 1
    verdict("5 (transition matrices)", worst <= 1e-12,
            f"{count} bases with K<=100 (N<=8, m<=10, both statistics): max error {worst:.1e} (<=1e-12)")


@pytest.mark.slow
def test_6_convergence_reproduction():
    t_max = 3 * T
    r78, r88 = runs.bose_fermi_small_run(7, 8), runs.bose_fermi_small_run(8, 8)
    r710, r810 = runs.bose_fermi_small_run(7, 10), runs.bose_fermi_small_run(8, 10)
    a = max_delta(r78, r88, t_max)
    b = max_delta(r88, r810, t_max)
    keep = r810.traj.times <= t_max + 1e-9
    c = float(np.nanmax(population_difference(r710.traj.populations[keep], r810.traj.populations[keep], 0)))
    smallest_nsf = float(np.max(r810.traj.populations[keep, -1]))
    smallest_no = max(float(np.max(p[keep, -1])) for p in r810.traj.orbital_populations)
    checks = {
        "a": 0.006 <= a <= 0.024,
        "b": 0.01 <= b <= 0.04,
        "c": c < 0.04,
        "d": smallest_nsf < 1e-3 and smallest_no < 1e-3,
    }
    verdict("6 (convergence)", all(checks.values()),
            f"(a) Delta 7-(8,8)/8-(8,8) {a:.2%} in [0.6%, 2.4%] {'ok' if checks['a'] else 'NO'}; "
            f"(b) Delta 8-(8,8)/8-(10,10) {b:.2%} in [1%, 4%] {'ok' if checks['b'] else 'NO'}; "
            f"(c) dlambda_1 7-(10,10)/8-(10,10) {c:.2%} < 4% {'ok' if checks['c'] else 'NO'}; "
            f"(d) smallest NSF {smallest_nsf:.1e}, NO {smallest_no:.1e} < 1e-3 {'ok' if checks['d'] else 'NO'}")


def transmitted_after_second_collision(run) -> tuple[float, float, float]:
    """Fermionic fraction beyond the boson centre at the fermions' turning point
    after their second collision with the bosons.

    Collisions are the minima of the fermionic centre of mass; the turning
    point is the next maximum.  Returns the time, the total fraction and the
    part of it carried by the leading Schmidt layer.
    """
    xf = species_centre(run, 0)
    xb = species_centre(run, 1)
    collisions = argrelmin(xf)[0]
    turning = [i for i in argrelmax(xf)[0] if i > collisions[1]][0]
    x = run.grid.points
    beyond = x < xb[turning]
    n = run.system.n_particles[0]
    total = float(run.grid.integrate(np.where(beyond, run.traj.densities[0][turning], 0.0)) / n)
    lead = np.nan
    if run.traj.layers is not None:
        lead = float(run.grid.integrate(np.where(beyond, run.traj.layers[0][turning, 0], 0.0)) / n)
    return float(run.traj.times[turning]), total, lead


def reflected_fraction(run, density) -> float:
    """Part of species A (released at x > 0) still on the x > 0 side."""
    x = run.grid.points
    return float(run.grid.integrate(np.where(x > 0, density, 0.0)) / run.system.n_particles[0])


@pytest.mark.slow
def test_7_beyond_mean_field_signatures():
    # (a) correlation-induced transmission of the fermionic impurities
    full, mf = runs.impurity_run(2.0), runs.impurity_run(2.0, mean_field=True)
    t_full, trans_full, trans_lead = transmitted_after_second_collision(full)
    t_mf, trans_mf, _ = transmitted_after_second_collision(mf)
    higher = 1 - trans_lead / trans_full
    ok_a = trans_full > 5 * trans_mf and higher > 0.5

    # (b) correlation-induced reflection in the Fermi-Fermi collision, read at t = T/2
    ff, hf = runs.fermi_fermi_run(0.4), runs.fermi_fermi_run(0.4, hartree_fock=True)
    i = int(np.argmin(np.abs(ff.traj.times - T / 2)))
    refl = reflected_fraction(ff, ff.traj.densities[0][i])
    refl_lead = reflected_fraction(ff, ff.traj.layers[0][i, 0])
    refl_hf = reflected_fraction(hf, hf.traj.densities[0][i])
    # absent = below 1% of the correlated run's reflected fraction
    ok_b = refl_lead < 0.01 * refl and refl_hf < 0.01 * refl

    # (c) depletion of the leading Schmidt layer after the first collision
    depletion = [1 - runs.fermi_fermi_run(g).traj.populations[i, 0] for g in (0.2, 0.4, 1.0)]
    ok_c = bool(np.all(np.diff(depletion) > 0))

    verdict("7 (beyond mean field)", ok_a and ok_b and ok_c,
            f"(a) BF 10+3 transmitted {trans_full:.3f} at t={t_full:.2f} vs mean field {trans_mf:.4f} "
            f"at t={t_mf:.2f}, ratio {trans_full / trans_mf:.1f} (>5) {'ok' if ok_a else 'NO'}, "
            f"layers k>=2 carry {higher:.0%}; "
            f"(b) FF reflected {refl:.1e}, leading layer {refl_lead:.1e}, HF {refl_hf:.1e} "
            f"{'ok' if ok_b else 'NO'}; "
            f"(c) 1-lambda_1 at T/2 for g=0.2,0.4,1.0: "
            f"{', '.join(f'{d:.2e}' for d in depletion)} {'ok' if ok_c else 'NO'}")


@pytest.mark.slow
def test_8_physics_sanity():
    worst = {}
    for run in conservation_runs():
        if run.system.inter_kernel.is_zero:
            continue
        com = centre_of_mass(run)
        worst[run.label] = float(np.max(np.abs(com - com[0] * np.cos(run.traj.times))))
    ideal = {}
    for stats, expected in (((BOSON, BOSON), 2 * 1.0), ((FERMION, FERMION), 2 * 2.0),
                            ((BOSON, FERMION), 1.0 + 2.0)):
        sysm = mixture(*stats, n=(2, 2), g=(0, 0), g_ab=0.0, L=8.0, G=128)
        m = tuple(1 if s == BOSON else 2 for s in stats)
        ground = relax(sysm, Truncation(1, m),
                       PropagationConfig(200.0, mode="imaginary", output_stride=0.5))
        ideal["".join(s[0].upper() for s in stats)] = abs(state_energy(ground, sysm) - expected)
    com_ok = all(v <= 1e-5 for v in worst.values())
    ideal_ok = all(v <= 1e-6 for v in ideal.values())
    label = max(worst, key=worst.get)
    verdict("8 (physics sanity)", com_ok and ideal_ok,
            f"max |X(t) - X(0) cos t| {worst[label]:.1e} ({label}) over {len(worst)} runs (<=1e-5); "
            f"ideal 2+2 energy errors " + ", ".join(f"{k} {v:.1e}" for k, v in ideal.items()) + " (<=1e-6)")
