import numpy as np
import pytest

from mlmctdhx.fock import BOSON, FERMION
from mlmctdhx.grid import build_grid
from mlmctdhx.system import MixtureState, MixtureSystem, Species, Truncation, lowdin


def random_state(system: MixtureSystem, truncation: Truncation, rng) -> MixtureState:
    """Normalised state with random orthonormal SBSs and orbitals."""
    def cnoise(shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    M = truncation.n_sbs
    bases = truncation.bases(system)
    dx = system.grid.spacing
    x = system.grid.points
    coeffs = tuple(lowdin(cnoise((M, b.size))) for b in bases)
    # smooth random orbitals: random combinations of localised Gaussians
    centres = np.linspace(-0.6, 0.6, 8) * system.grid.half_width
    bumps = np.exp(-((x[None, :] - centres[:, None]) ** 2))
    orbs = tuple(lowdin(cnoise((m, len(centres))) @ bumps + 0.05 * cnoise((m, len(x))), dx)
                 if m < len(x) else lowdin(cnoise((m, len(x))), dx)
                 for m in truncation.n_orbitals)
    A = cnoise((M, M))
    return MixtureState(A / np.linalg.norm(A), coeffs, orbs)


def mixture(stat_a=BOSON, stat_b=FERMION, n=(2, 2), g=(0.3, 0.0), g_ab=0.7, offsets=(0.0, 0.0),
            L=5.0, G=32, inter_kernel=None) -> MixtureSystem:
    grid = build_grid(L, G)
    species = (Species(stat_a, n[0], offset=offsets[0], g_intra=g[0]),
               Species(stat_b, n[1], offset=offsets[1], g_intra=g[1]))
    return MixtureSystem(grid, species, g_ab, inter_kernel=inter_kernel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
