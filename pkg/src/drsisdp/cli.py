"""Command-line entry point: load a config, run the experiment, write artifacts.

Exit codes: 0 success, 1 unexpected internal error, 2 configuration or usage
error, 3 solver failure (no usable result), 4 partial result (at least one
closed-loop trajectory was truncated).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, ExperimentConfig, build_drmpc_spec, build_sisdp_problem,
                     estimated_sigma_hat, load_config, solver_options, stopping)
from .drmpc import DrmpcProgram, solve_drmpc
from .sdp_core import Status
from .sim import NoiseModel, run_closed_loop, violation_stats, worker_count
from .sisdp import build_relaxed_program, sample_index_tuple, solve_sisdp, verify_feasibility

log = logging.getLogger("drsisdp")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3, 4

TRAJECTORY_FILE = "trajectories.csv"
SUMMARY_FILE = "summary.json"
PHASE_FILE = "phase_portrait.csv"
PROGRAM_FILE = "program.txt"

SUMMARY_KEYS = ("mode", "status", "truncated", "message", "seed", "wall_time_s",
                "solver_tolerances", "sigma_hat", "result")


class SolverFailure(RuntimeError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_trajectories(path: Path, rows, d: int, m: int):
    """rows: iterable of (traj_id, t, x, u-or-None)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "t"] + [f"x{i + 1}" for i in range(d)] + [f"u{i + 1}" for i in range(m)])
        for traj, t, x, u in rows:
            us = [""] * m if u is None else [_fmt(v) for v in u]
            w.writerow([traj, t] + [_fmt(v) for v in x] + us)


def write_phase_portrait(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "t", "x1", "x2"])
        for traj, t, x, _ in rows:
            x2 = _fmt(x[1]) if len(x) > 1 else ""
            w.writerow([traj, t, _fmt(x[0]), x2])


def _record_rows(records):
    for rec in records:
        for t, x in enumerate(rec.states):
            u = rec.inputs[t] if t < rec.n_steps else None
            yield rec.traj_id, t, x, u


def _run_sisdp(cfg: ExperimentConfig, out: Path, dump: bool):
    problem = build_sisdp_problem(cfg)
    rng = np.random.default_rng(cfg.algorithm.seed)
    opts = solver_options(cfg)
    if dump:
        d = sample_index_tuple(problem, np.random.default_rng(cfg.algorithm.seed), cfg.algorithm.tuple_length)
        (out / PROGRAM_FILE).write_text(build_relaxed_program(problem, d).listing())
    res = solve_sisdp(problem, stopping(cfg), rng, opts)
    result = {"value": res.value, "status": res.status.value, "iterations": res.iterations,
              "evaluations": res.evaluations, "gbar_history": res.history,
              "X": res.X, "max_violation": verify_feasibility(res.X, problem) if res.X is not None else None}
    if res.status is not Status.OPTIMAL:
        raise SolverFailure(f"SI-SDP outer loop ended with status {res.status.value}")
    return result, None, False


def _run_open_loop(cfg: ExperimentConfig, out: Path, dump: bool):
    spec = build_drmpc_spec(cfg)
    x0 = np.array(cfg.x0)
    if dump:
        corner = np.array([spec.ambiguity.corner])
        (out / PROGRAM_FILE).write_text(DrmpcProgram(spec, x0).program(corner).listing())
    pol = solve_drmpc(spec, x0, stopping(cfg), np.random.default_rng(cfg.algorithm.seed), solver_options(cfg))
    if pol.status is not Status.OPTIMAL:
        raise SolverFailure(f"planner returned {pol.status.value} at x0 (initial state infeasible?)")
    st = pol.stages
    rows = [(0, t, st.mu[t], st.u_bar[t] if t < spec.N else None) for t in range(spec.N + 1)]
    S_f = spec.constraints.S_f
    result = {"value": pol.value, "iterations": pol.iterations, "gbar_history": pol.history,
              "u_bar": st.u_bar, "mu": st.mu, "K": pol.K, "r0": st.r0,
              "terminal_trace": float(np.trace(S_f @ st.P_N)) if S_f is not None else None,
              "n_infeasible_iterations": pol.n_infeasible}
    return result, rows, False


def _run_closed_loop(cfg: ExperimentConfig, out: Path, dump: bool):
    spec = build_drmpc_spec(cfg)
    x0 = np.array(cfg.x0)
    if dump:
        corner = np.array([spec.ambiguity.corner])
        (out / PROGRAM_FILE).write_text(DrmpcProgram(spec, x0).program(corner).listing())
    noise = NoiseModel(cfg.sim.noise_variance, seed=cfg.algorithm.seed)
    records = run_closed_loop(spec, x0, cfg.sim.T, cfg.sim.n_traj, noise, stopping(cfg), solver_options(cfg))
    truncated = any(r.truncated for r in records)
    finals = [r.states[-1] for r in records if not r.truncated]
    result = {
        "n_traj": len(records), "T": cfg.sim.T, "workers": worker_count(len(records)),
        "final_state_norm_mean": float(np.mean([np.linalg.norm(x) for x in finals])) if finals else None,
        "violation_stats": violation_stats(records, spec.constraints),
        "trajectories": [{
            "traj_id": r.traj_id, "n_steps": r.n_steps, "truncated": r.truncated, "reason": r.reason,
            "values": r.values, "iterations": r.iterations, "wall_times": r.wall_times,
            "terminal_trace": r.terminal_trace, "gbar_history": r.histories,
        } for r in records],
    }
    return result, list(_record_rows(records)), truncated


RUNNERS = {"sisdp": _run_sisdp, "drmpc-open-loop": _run_open_loop, "drmpc-closed-loop": _run_closed_loop}


def run(cfg: ExperimentConfig, out: Path | None = None, dump_program: bool = False) -> int:
    """Run one experiment and write its artifacts; returns the process exit code."""
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {k: None for k in SUMMARY_KEYS}
    summary.update(mode=cfg.mode, seed=cfg.algorithm.seed, truncated=False,
                   solver_tolerances=asdict(cfg.solver))
    t0 = time.perf_counter()
    code = EXIT_OK
    rows = None
    try:
        if cfg.mode != "sisdp":
            summary["sigma_hat"] = estimated_sigma_hat(cfg)
        result, rows, truncated = RUNNERS[cfg.mode](cfg, out, dump_program)
        summary["result"] = result
        summary["truncated"] = truncated
        summary["status"] = "truncated" if truncated else "ok"
        summary["message"] = "one or more trajectories were truncated" if truncated else ""
        code = EXIT_PARTIAL if truncated else EXIT_OK
    except ConfigError as exc:
        summary.update(status="config_error", message=str(exc))
        code = EXIT_CONFIG
    except SolverFailure as exc:
        summary.update(status="solver_failure", message=str(exc))
        code = EXIT_SOLVER
    except Exception as exc:  # noqa: BLE001 - reported as a categorized failure
        log.exception("internal error")
        summary.update(status="internal_error", message=f"{type(exc).__name__}: {exc}")
        code = EXIT_INTERNAL
    summary["wall_time_s"] = time.perf_counter() - t0
    if rows is not None:
        d = len(rows[0][2]) if rows else (len(cfg.x0) if cfg.x0 else 0)
        m = len(cfg.system.B[0]) if cfg.system is not None else 0
        write_trajectories(out / TRAJECTORY_FILE, rows, d, m)
        write_phase_portrait(out / PHASE_FILE, rows)
    (out / SUMMARY_FILE).write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    if code != EXIT_OK:
        print(f"drsisdp: {summary['status']}: {summary['message']}", file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="drsisdp", description="Run SI-SDP / distributionally robust MPC experiments.")
    ap.add_argument("--config", required=True, help="path to a TOML experiment config")
    ap.add_argument("--seed", type=int, help="override algorithm.seed (nonnegative integer)")
    ap.add_argument("--out", help="output directory (default: config output_dir)")
    ap.add_argument("--dump-program", action="store_true",
                    help="also write the assembled constraint listing to program.txt")
    ap.add_argument("--max-iters", type=int, help="override algorithm.max_iters")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
            cfg = cfg.with_overrides(**{"algorithm.seed": args.seed})
        if args.max_iters is not None:
            if args.max_iters < 1:
                raise ConfigError(f"--max-iters must be >= 1, got {args.max_iters}")
            cfg = cfg.with_overrides(**{"algorithm.max_iters": args.max_iters})
    except ConfigError as exc:
        print(f"drsisdp: config_error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out, args.dump_program)


if __name__ == "__main__":
    sys.exit(main())
