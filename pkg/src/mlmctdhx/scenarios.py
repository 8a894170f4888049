"""Ready-made run configurations for the standard quench scenarios.

Every function returns a plain config dictionary in the format read by
``mlmctdhx run --config``; pass it through :func:`mlmctdhx.io.resolve_config`
to obtain the system and truncation objects.
"""

from __future__ import annotations

from .fock import BOSON, FERMION


def _config(system: dict, truncation: dict, t_final: float, layers: int = 0, **propagation) -> dict:
    return {
        "system": system,
        "truncation": truncation,
        "propagation": {"t_final": t_final, **propagation},
        "analysis": {"layers": layers},
        "seed": 0,
    }


def bose_fermi_small(M: int = 8, m_f: int = 10, m_b: int = 10, g_bf: float = 1.0,
                     t_final: float = 20.0, n_points: int = 192, half_width: float = 12.0) -> dict:
    """Two fermions and two bosons released from traps displaced by -/+2.

    Species A holds the fermions (initially at ``x = +2``), species B the
    bosons (at ``x = -2``, ``g_BB = 0.05``).  The box is as wide as for the
    impurity scenario; at ``L = 8`` wall reflections shift the centre of mass
    by about 1e-5 over three periods.
    """
    system = {"statistics_A": FERMION, "statistics_B": BOSON, "N_A": 2, "N_B": 2,
              "x0_A": 2.0, "x0_B": -2.0, "g_A": 0.0, "g_B": 0.05, "g_AB": g_bf}
    return _config(system, {"M": M, "m_A": m_f, "m_B": m_b, "G": n_points, "L": half_width}, t_final)


def bose_fermi_impurities(g_bf: float, M: int = 6, m_f: int = 8, m_b: int = 6,
                          t_final: float = 6.5, n_points: int = 192, half_width: float = 12.0) -> dict:
    """Three fermions colliding with a ten-boson cloud.

    Fermions (species A) start at ``x = +2``, bosons (species B, ``g_BB = 0.05``)
    at ``x = -2``.  ``M = 1, m_f = 3, m_b = 1`` is the species mean-field
    reference.

    Fermions reflected by the boson cloud overshoot to ``|x| > 7``; the wider
    box keeps them away from the hard walls, which would otherwise spoil the
    centre-of-mass oscillation at the 1e-4 level.  Correlated orbitals need
    ``dx <= 0.125``: on coarser grids the contact interaction no longer
    commutes with the total momentum, and the centre of mass drifts by
    1e-5 (``G = 128``) to 1e-4 (``G = 96``).
    """
    system = {"statistics_A": FERMION, "statistics_B": BOSON, "N_A": 3, "N_B": 10,
              "x0_A": 2.0, "x0_B": -2.0, "g_A": 0.0, "g_B": 0.05, "g_AB": g_bf}
    return _config(system, {"M": M, "m_A": m_f, "m_B": m_b, "G": n_points, "L": half_width},
                   t_final, layers=3 if M > 1 else 0)


def fermi_fermi(g_ff: float, M: int = 5, m: int = 8, t_final: float = 3.5,
                n_points: int = 192, half_width: float = 12.0) -> dict:
    """Two clouds of six fermions released from traps displaced by -/+4.5.

    The wider box keeps the displaced clouds, whose Fermi edge sits near
    ``|x| = 8``, clear of the hard walls.
    """
    system = {"statistics_A": FERMION, "statistics_B": FERMION, "N_A": 6, "N_B": 6,
              "x0_A": 4.5, "x0_B": -4.5, "g_A": 0.0, "g_B": 0.0, "g_AB": g_ff}
    return _config(system, {"M": M, "m_A": m, "m_B": m, "G": n_points, "L": half_width}, t_final)


PRESETS = {
    "bose-fermi-2+2": bose_fermi_small,
    "bose-fermi-10+3": lambda: bose_fermi_impurities(0.5),
    "fermi-fermi-6+6": lambda: fermi_fermi(0.4),
}
