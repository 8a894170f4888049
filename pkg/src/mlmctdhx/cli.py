"""Command-line driver: ``mlmctdhx {run,relax-only,resume,compare}``.

Exit codes: 0 success, 2 invalid configuration or input, 3 invariant
violation during propagation, 4 relaxation not converged.  Failures of kinds
3 and 4 leave an ``error.json`` record and the last good state as
``checkpoint.bin`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import density_difference, population_difference
from .eom import ConvergenceError, PropagationError, Trajectory, propagate, relax, state_energy
from .io import (ConfigError, RunConfig, check_checkpoint, load_config, read_checkpoint,
                 read_run, read_series, write_checkpoint, write_trajectory, _write_csv)
from .scenarios import PRESETS

log = logging.getLogger("mlmctdhx")

EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_CONVERGENCE = 4
SERIES = ("energies.csv", "populations.csv", "density_*.csv", "schmidt_layer_*.csv")


def _series_files(directory: Path) -> list[Path]:
    return sorted(p for pattern in SERIES for p in directory.glob(pattern))


class _Checkpointer:
    """Observer writing ``checkpoint.bin`` every ``stride`` time units."""

    def __init__(self, path: Path, system, stride: float, start: float, reference_energy: float):
        self.path = path
        self.system = system
        self.reference_energy = reference_energy
        self.stride = stride
        self.next = start + stride

    def __call__(self, state, step):
        if state.t >= self.next - 1e-9:
            write_checkpoint(self.path, state, self.system, step, self.reference_energy)
            while self.next <= state.t + 1e-9:
                self.next += self.stride


def _metadata(config: RunConfig, args, extra: dict) -> dict:
    return {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "truncation": config.label,
        "coefficients": config.truncation.coefficient_count(config.system),
        "seed": config.seed,
        "threads": args.threads,
        "config": config.raw,
        **extra,
    }


def _invariants(traj: Trajectory) -> dict:
    return {
        "max_norm_deviation": float(np.max(np.abs(traj.norms - 1.0))),
        "max_energy_drift": float(np.max(np.abs(traj.energies - traj.energies[0]))),
        "max_gram_defect": float(np.max(traj.gram_defects)),
        "max_gauge_residual": float(np.max(traj.gauge_residuals)),
        "max_schmidt_mismatch": float(np.max(np.abs(
            np.sort(traj.populations, axis=1) - np.sort(traj.populations_b, axis=1)))),
        "rhs_evaluations": int(traj.n_evaluations),
        "regularized_inversions": int(traj.n_regularized),
    }


def _write_error(out: Path, kind: str, exc: Exception, state=None, system=None) -> None:
    record = {"error": kind, "message": str(exc)}
    if state is not None:
        record["t"] = float(state.t)
        write_checkpoint(out / "checkpoint.bin", state, system)
    diagnostics = getattr(exc, "diagnostics", None)
    if diagnostics:
        record["diagnostics"] = {k: float(v) for k, v in diagnostics.items()}
    (out / "error.json").write_text(json.dumps(record, indent=2))


def _relax(config: RunConfig, out: Path):
    history: list = []
    try:
        ground = relax(config.system, config.truncation, config.relaxation, seed=config.seed,
                       history=history)
    finally:
        if history:
            _write_csv(out / "relax_energies.csv", ["tau", "E"], np.array(history))
    return ground, history


def _propagate(config: RunConfig, state, out: Path, step: float | None = None,
               reference_energy: float | None = None) -> Trajectory:
    system = config.system.quenched()
    if reference_energy is None:
        reference_energy = state_energy(state, system)
    prop = replace(config.propagation, reference_energy=reference_energy)
    if step:
        prop = replace(prop, first_step=step)
    observer = _Checkpointer(out / "checkpoint.bin", system, config.checkpoint_stride, state.t,
                             reference_energy)
    traj = propagate(state, system, prop, observer=observer)
    write_checkpoint(out / "checkpoint.bin", traj.final_state, system, traj.next_step,
                     reference_energy)
    return traj


def _merge_series(out: Path, t_start: float) -> None:
    """Prepend rows of an earlier segment (``t < t_start``) kept in ``out/previous``."""
    prev = out / "previous"
    for old in _series_files(prev):
        if not (out / old.name).exists():
            continue
        header, data = read_series(old)
        _, new = read_series(out / old.name)
        keep = data[data[:, 0] < t_start - 1e-9]
        _write_csv(out / old.name, header, np.vstack([keep, new]))
    shutil.rmtree(prev)


def cmd_run(args, config: RunConfig, out: Path) -> int:
    start = time.perf_counter()
    try:
        ground, history = _relax(config, out)
    except ConvergenceError as exc:
        _write_error(out, "relaxation_not_converged", exc, exc.state, config.system)
        return EXIT_CONVERGENCE
    write_checkpoint(out / "ground_state.bin", ground, config.system)
    try:
        traj = _propagate(config, ground, out)
    except PropagationError as exc:
        _write_error(out, "invariant_violation", exc, exc.state, config.system.quenched())
        return EXIT_INVARIANT
    write_trajectory(out, traj, config.system)
    meta = _metadata(config, args, {
        "ground_state_energy": history[-1][1],
        "relaxation_time": history[-1][0],
        "invariants": _invariants(traj),
        "wall_time_s": time.perf_counter() - start,
    })
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    return 0


def cmd_relax(args, config: RunConfig, out: Path) -> int:
    start = time.perf_counter()
    try:
        ground, history = _relax(config, out)
    except ConvergenceError as exc:
        _write_error(out, "relaxation_not_converged", exc, exc.state, config.system)
        return EXIT_CONVERGENCE
    write_checkpoint(out / "checkpoint.bin", ground, config.system)
    meta = _metadata(config, args, {
        "ground_state_energy": history[-1][1],
        "relaxation_time": history[-1][0],
        "wall_time_s": time.perf_counter() - start,
    })
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    return 0


def cmd_resume(args, config: RunConfig, out: Path) -> int:
    if args.checkpoint is None:
        raise ConfigError("resume needs --checkpoint")
    try:
        state, header = read_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    check_checkpoint(header, config)
    if not config.propagation.t_final > state.t:
        raise ConfigError(f"checkpoint time {state.t} is not before t_final={config.propagation.t_final}")
    start = time.perf_counter()
    source = Path(args.checkpoint).resolve().parent
    merge = (source / "energies.csv").exists()
    if merge:
        prev = out / "previous"
        prev.mkdir(exist_ok=True)
        for path in _series_files(source):
            (prev / path.name).write_bytes(path.read_bytes())
    try:
        traj = _propagate(config, state, out, header["step"], header["reference_energy"] or None)
    except PropagationError as exc:
        _write_error(out, "invariant_violation", exc, exc.state, config.system.quenched())
        return EXIT_INVARIANT
    write_trajectory(out, traj, config.system)
    if merge:
        _merge_series(out, state.t)
    meta = _metadata(config, args, {
        "resumed_from": str(Path(args.checkpoint).resolve()),
        "resumed_at": state.t,
        "invariants": _invariants(traj),
        "wall_time_s": time.perf_counter() - start,
    })
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    return 0


def compare_runs(dir_c, dir_ref) -> tuple[list[str], np.ndarray, dict]:
    """Observable differences between two runs on the same grid and times.

    Returns the column names, the table (time first) and a summary with the
    maximum of every column and the time it occurs.
    """
    c, r = read_run(dir_c), read_run(dir_ref)
    if c.x.shape != r.x.shape or not np.allclose(c.x, r.x):
        raise ValueError("the two runs use different grids")
    if c.times.shape != r.times.shape or not np.allclose(c.times, r.times, atol=1e-9):
        raise ValueError("the two runs have different output times")
    n = [r.metadata["config"]["system"][f"N_{k}"] for k in "AB"]
    dx = c.x[1] - c.x[0]
    cols = {"Delta_A": density_difference(c.densities[0], r.densities[0], n[0], dx),
            "Delta_B": density_difference(c.densities[1], r.densities[1], n[1], dx)}
    for i in range(min(c.populations.shape[1], r.populations.shape[1])):
        cols[f"dlambda_{i + 1}"] = population_difference(c.populations, r.populations, i)
    for s, key in ((0, "A"), (1, "B")):
        for i in range(min(c.orbital_populations[s].shape[1], r.orbital_populations[s].shape[1])):
            cols[f"dn{key}_{i + 1}"] = population_difference(c.orbital_populations[s],
                                                             r.orbital_populations[s], i)
    table = np.column_stack([c.times] + list(cols.values()))
    summary = {}
    for name, v in cols.items():
        if np.all(np.isnan(v)):
            summary[name] = {"max": None, "t": None}
        else:
            i = int(np.nanargmax(v))
            summary[name] = {"max": float(v[i]), "t": float(c.times[i])}
    return ["t"] + list(cols), table, summary


def cmd_compare(args, out: Path) -> int:
    try:
        header, table, summary = compare_runs(args.run, args.reference)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    _write_csv(out / "compare.csv", header, table)
    (out / "compare_summary.json").write_text(json.dumps(summary, indent=2))
    for name, entry in summary.items():
        if entry["max"] is not None:
            print(f"{name:>12s}  max {entry['max']:.3e}  at t={entry['t']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlmctdhx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(q, config_required=True):
        q.add_argument("--out", required=True, type=Path, help="output directory")
        q.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP threads")
        q.add_argument("-v", "--verbose", action="store_true")
        if config_required:
            q.add_argument("--config", required=True,
                           help=f"JSON config file or preset name ({', '.join(PRESETS)})")
            q.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    common(sub.add_parser("run", help="relax in displaced traps, then propagate after the quench"))
    common(sub.add_parser("relax-only", help="imaginary-time relaxation only"))
    q = sub.add_parser("resume", help="continue a propagation from a checkpoint")
    common(q)
    q.add_argument("--checkpoint", type=Path, required=True)
    q = sub.add_parser("compare", help="density and population differences of two runs")
    q.add_argument("run", type=Path)
    q.add_argument("reference", type=Path)
    common(q, config_required=False)
    return p


def _load(spec: str, seed):
    from .io import resolve_config
    if spec in PRESETS and not Path(spec).exists():
        return resolve_config(PRESETS[spec](), seed=seed)
    return load_config(spec, seed=seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=args.threads):
            if args.verb == "compare":
                return cmd_compare(args, out)
            try:
                config = _load(args.config, args.seed)
            except OSError as exc:
                raise ConfigError(str(exc)) from exc
            handler = {"run": cmd_run, "relax-only": cmd_relax, "resume": cmd_resume}[args.verb]
            return handler(args, config, out)
    except ConfigError as exc:
        print(f"mlmctdhx: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
