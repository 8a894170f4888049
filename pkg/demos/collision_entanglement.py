"""Two bosons and two fermions colliding in a harmonic trap.

The species start in traps displaced to -/+2.  After the traps are merged
the clouds oscillate and pass through each other twice per trap period.  Each
passage entangles the species, visible as a drop of the leading Schmidt
weight lambda_1 below one.  A species mean-field run (one species state)
cannot show this and misplaces the densities.

A small truncation keeps the runtime to a few minutes on one core; the
converged 8-(10,10) numbers appear in the slow test suite.
"""

import numpy as np
from scipy.signal import argrelmax

from mlmctdhx.analysis import center_of_mass, density_difference
from mlmctdhx.eom import propagate, relax
from mlmctdhx.io import resolve_config
from mlmctdhx.scenarios import bose_fermi_small

T = 2 * np.pi


def run(M, m_f, m_b):
    config = resolve_config(bose_fermi_small(M, m_f, m_b, t_final=T, n_points=96), environ={})
    ground = relax(config.system, config.truncation, config.relaxation, seed=config.seed)
    traj = propagate(ground, config.system.quenched(), config.propagation)
    return config, traj


# %% Correlated run and species mean field
config, traj = run(3, 4, 4)
_, mf = run(1, 2, 1)
grid = config.system.grid
print(f"truncations {config.label} and 1-(2,1); coefficients {config.truncation.coefficient_count(config.system)}")

# %% Collisions: maxima of the overlap of the two species densities
overlap = grid.integrate(traj.densities[0] * traj.densities[1])
peaks = traj.times[argrelmax(overlap)[0]]
print("overlap maxima at t / (T/4) =", np.round(peaks / (T / 4), 2))

# %% Entanglement and the centre-of-mass theorem
# The total centre of mass follows X(0) cos t exactly in the continuum; the
# residual measures how much the coarse grid and the walls break translations.
x_f = center_of_mass(traj.densities[0], grid)
x_b = center_of_mass(traj.densities[1], grid)
x_tot = (x_f + x_b) / 2
print(f"min lambda_1 {traj.populations[:, 0].min():.4f} at t={traj.times[traj.populations[:, 0].argmin()]:.2f}")
print(f"max |X_tot(t) - X_tot(0) cos t| {np.max(np.abs(x_tot - x_tot[0] * np.cos(traj.times))):.1e}")

# %% How far off is the species mean field?
for s, name in ((0, "fermions"), (1, "bosons")):
    d = density_difference(mf.densities[s], traj.densities[s], 2, grid)
    print(f"{name}: max density distance to mean field {d.max():.3f}")

print("\n   t     lambda_1   X_F      X_B")
for i in range(0, len(traj.times), 10):
    print(f"{traj.times[i]:5.2f}  {traj.populations[i, 0]:.5f}  {x_f[i]:+.3f}  {x_b[i]:+.3f}")
