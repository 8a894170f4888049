"""Run configuration, CSV series and the binary checkpoint format.

The byte layout of checkpoints and the CSV columns are documented in
``docs/formats.md``.
"""

from __future__ import annotations

import copy
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eom import PropagationConfig, RegularizationPolicy, Trajectory
from .fock import BOSON, FERMION, basis_size
from .grid import build_grid
from .system import MixtureState, MixtureSystem, Species, Truncation

CHECKPOINT_MAGIC = b"MLXCKPT1"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIIIIIIdddd")
_STAT_CODES = {BOSON: 0, FERMION: 1}

ENV_PREFIX = "MLMCTDHX_"
ENV_OVERRIDES = {
    "ATOL": ("propagation", "atol"),
    "RTOL": ("propagation", "rtol"),
    "EPSILON": ("propagation", "epsilon"),
    "RELAX_TOL": ("relaxation", "energy_tolerance"),
}

DEFAULTS = {
    "system": {
        "statistics_A": BOSON, "statistics_B": BOSON, "N_A": 1, "N_B": 1,
        "mass_A": 1.0, "mass_B": 1.0, "omega": 1.0, "x0_A": 0.0, "x0_B": 0.0,
        "g_A": 0.0, "g_B": 0.0, "g_AB": 0.0,
    },
    "truncation": {"M": 1, "m_A": 1, "m_B": 1, "G": 128, "L": 8.0},
    "propagation": {
        "t_final": 20.0, "output_stride": 0.05, "atol": 1e-8, "rtol": 1e-8,
        "method": "DOP853", "first_step": None, "max_step": None,
        "checkpoint_stride": 5.0, "epsilon": 1e-8,
    },
    "relaxation": {"tau_max": 200.0, "output_stride": 0.5, "energy_tolerance": 1e-9},
    "analysis": {"layers": 0},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration: the raw blocks plus the objects built from them."""

    raw: dict
    system: MixtureSystem
    truncation: Truncation
    propagation: PropagationConfig
    relaxation: PropagationConfig
    checkpoint_stride: float
    n_layers: int
    seed: int

    @property
    def label(self) -> str:
        return self.truncation.label


def _merge(defaults: dict, given: dict, where: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a block")
            out[key] = _merge(defaults[key], value, where + key + ".")
        else:
            out[key] = value
    return out


def apply_env_overrides(raw: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    for suffix, (block, key) in ENV_OVERRIDES.items():
        name = ENV_PREFIX + suffix
        if name in environ:
            try:
                raw[block][key] = float(environ[name])
            except ValueError as exc:
                raise ConfigError(f"{name}={environ[name]!r} is not a number") from exc
    return raw


def resolve_config(given: dict, environ=None, seed: int | None = None) -> RunConfig:
    """Merge with defaults, apply environment overrides and validate.

    Raises
    ------
    ConfigError
        On unknown keys, invalid values or inconsistent truncations
        (for example fewer orbitals than fermions).
    """
    raw = apply_env_overrides(_merge(DEFAULTS, given), environ)
    if seed is not None:
        raw["seed"] = int(seed)
    s, tr, pr, rx = raw["system"], raw["truncation"], raw["propagation"], raw["relaxation"]
    try:
        grid = build_grid(float(tr["L"]), int(tr["G"]))
        species = tuple(
            Species(s[f"statistics_{k}"], int(s[f"N_{k}"]), float(s[f"mass_{k}"]),
                    float(s["omega"]), float(s[f"x0_{k}"]), float(s[f"g_{k}"]))
            for k in "AB")
        system = MixtureSystem(grid, species, float(s["g_AB"]))
        truncation = Truncation(int(tr["M"]), (int(tr["m_A"]), int(tr["m_B"])))
        truncation.validate(system)
        policy = RegularizationPolicy(float(pr["epsilon"]))
        n_layers = int(raw["analysis"]["layers"])
        propagation = PropagationConfig(
            t_final=float(pr["t_final"]), mode="real", atol=float(pr["atol"]), rtol=float(pr["rtol"]),
            first_step=pr["first_step"], max_step=np.inf if pr["max_step"] is None else float(pr["max_step"]),
            output_stride=float(pr["output_stride"]), method=pr["method"], regularization=policy,
            n_layers=n_layers)
        relaxation = PropagationConfig(
            t_final=float(rx["tau_max"]), mode="imaginary", atol=float(pr["atol"]), rtol=float(pr["rtol"]),
            output_stride=float(rx["output_stride"]), method=pr["method"], regularization=policy,
            energy_tolerance=float(rx["energy_tolerance"]))
        if not float(pr["checkpoint_stride"]) > 0:
            raise ValueError("checkpoint stride must be positive")
        if not propagation.t_final > 0:
            raise ValueError("t_final must be positive")
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(raw, system, truncation, propagation, relaxation,
                     float(pr["checkpoint_stride"]), n_layers, int(raw["seed"]))


def load_config(path, environ=None, seed: int | None = None) -> RunConfig:
    with open(path) as fh:
        try:
            given = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(given, environ, seed)


# ---------------------------------------------------------------- checkpoints

def write_checkpoint(path, state: MixtureState, system: MixtureSystem, step: float = 0.0,
                     reference_energy: float = 0.0) -> None:
    """Little-endian header followed by the raw complex128 arrays.

    ``step`` is the integrator's next trial step and ``reference_energy`` the
    energy of the rotating phase frame; storing both lets a resumed run
    continue with exactly the same step sequence.
    """
    sa, sb = system.species
    ma, mb = (p.shape[0] for p in state.orbitals)
    ka, kb = (c.shape[1] for c in state.coefficients)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                          _STAT_CODES[sa.statistics], _STAT_CODES[sb.statistics],
                          sa.n_particles, sb.n_particles, state.n_sbs, ka, kb, ma, mb,
                          system.grid.n_points, float(state.t), system.grid.half_width,
                          float(step or 0.0), float(reference_energy))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for arr in (state.A,) + tuple(state.coefficients) + tuple(state.orbitals):
            fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[MixtureState, dict]:
    """Inverse of :func:`write_checkpoint`; also returns the header fields."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    (magic, version, stat_a, stat_b, n_a, n_b, M, ka, kb, ma, mb, g, t, half_width, step,
     reference_energy) = \
        _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    shapes = [(M, M), (M, ka), (M, kb), (ma, g), (mb, g)]
    count = sum(a * b for a, b in shapes)
    body = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if body.size != count:
        raise ValueError(f"{path}: expected {count} complex values, found {body.size}")
    state = MixtureState.unpack(body.astype(complex), tuple(shapes), t)
    codes = {v: k for k, v in _STAT_CODES.items()}
    header = {"statistics": (codes[stat_a], codes[stat_b]), "n_particles": (n_a, n_b),
              "n_sbs": M, "n_orbitals": (ma, mb), "basis_sizes": (ka, kb),
              "n_points": g, "half_width": half_width, "t": t, "step": step,
              "reference_energy": reference_energy}
    return state, header


def check_checkpoint(header: dict, config: RunConfig) -> None:
    system, tr = config.system, config.truncation
    expected = {
        "statistics": tuple(s.statistics for s in system.species),
        "n_particles": system.n_particles,
        "n_sbs": tr.n_sbs,
        "n_orbitals": tr.n_orbitals,
        "n_points": system.grid.n_points,
    }
    for key, value in expected.items():
        if tuple(np.atleast_1d(header[key])) != tuple(np.atleast_1d(value)):
            raise ConfigError(f"checkpoint {key}={header[key]} does not match the config ({value})")
    if abs(header["half_width"] - system.grid.half_width) > 1e-12:
        raise ConfigError("checkpoint grid extent does not match the config")
    sizes = tuple(basis_size(s.statistics, s.n_particles, m) for s, m in zip(system.species, tr.n_orbitals))
    if tuple(header["basis_sizes"]) != sizes:
        raise ConfigError("checkpoint basis sizes do not match the config")


# ---------------------------------------------------------------- CSV series

def _write_csv(path, header: list[str], rows: np.ndarray) -> None:
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def write_trajectory(out: Path, traj: Trajectory, system: MixtureSystem) -> None:
    """energies.csv, populations.csv, density_A/B.csv and optional layer files."""
    out = Path(out)
    t = traj.times[:, None]
    _write_csv(out / "energies.csv", ["t", "E", "norm"],
               np.hstack([t, traj.energies[:, None], traj.norms[:, None]]))
    M = traj.populations.shape[1]
    ma, mb = (p.shape[1] for p in traj.orbital_populations)
    header = (["t"] + [f"lambda_{i + 1}" for i in range(M)]
              + [f"nA_{i + 1}" for i in range(ma)] + [f"nB_{i + 1}" for i in range(mb)])
    _write_csv(out / "populations.csv", header,
               np.hstack([t, traj.populations, *traj.orbital_populations]))
    x = [f"{v:.17g}" for v in system.grid.points]
    for key, dens in zip("AB", traj.densities):
        _write_csv(out / f"density_{key}.csv", ["t"] + x, np.hstack([t, dens]))
    if traj.layers is not None:
        n = traj.layers[0].shape[1]
        for k in range(n):
            for key, lay in zip("AB", traj.layers):
                _write_csv(out / f"schmidt_layer_{k + 1}_{key}.csv", ["t"] + x, np.hstack([t, lay[:, k]]))


def read_series(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


@dataclass(frozen=True, eq=False)
class RunOutput:
    """Series of a finished run as read back from its directory."""

    times: np.ndarray
    x: np.ndarray
    densities: tuple[np.ndarray, np.ndarray]
    populations: np.ndarray
    orbital_populations: tuple[np.ndarray, np.ndarray]
    energies: np.ndarray
    metadata: dict


def read_run(directory) -> RunOutput:
    d = Path(directory)
    try:
        metadata = json.loads((d / "metadata.json").read_text())
    except FileNotFoundError as exc:
        raise ValueError(f"{d} is not a run directory (metadata.json missing)") from exc
    dens = []
    x = None
    times = None
    for key in "AB":
        header, data = read_series(d / f"density_{key}.csv")
        x = np.array([float(v) for v in header[1:]])
        times = data[:, 0]
        dens.append(data[:, 1:])
    header, pops = read_series(d / "populations.csv")
    cols = {name: i for i, name in enumerate(header)}
    lam = pops[:, [cols[h] for h in header if h.startswith("lambda_")]]
    na = pops[:, [cols[h] for h in header if h.startswith("nA_")]]
    nb = pops[:, [cols[h] for h in header if h.startswith("nB_")]]
    _, en = read_series(d / "energies.csv")
    return RunOutput(times, x, tuple(dens), lam, (na, nb), en[:, 1], metadata)
