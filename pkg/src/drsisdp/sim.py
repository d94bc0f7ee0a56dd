"""Monte-Carlo closed-loop simulation under the receding-horizon DRMPC policy."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .drmpc import ConstraintSpec, DrmpcSpec, SystemModel, solve_drmpc
from .sdp_core import SolverOptions, Status
from .sisdp import StoppingConfig

log = logging.getLogger(__name__)

THREADS_ENV = "SISDP_THREADS"


def step(model: SystemModel, x, u, w):
    """x+ = A x + B u + sum_j (C_j x + D_j u) w_j."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if x.shape != (model.d,) or u.shape != (model.m,) or w.shape != (model.q,):
        raise ValueError(f"step: expected x in R^{model.d}, u in R^{model.m}, w in R^{model.q}, "
                         f"got {x.shape}, {u.shape}, {w.shape}")
    out = model.A @ x + model.B @ u
    for j in range(model.q):
        out = out + (model.C[j] @ x + model.D[j] @ u) * w[j]
    return out


@dataclass(frozen=True)
class NoiseModel:
    """Independent zero-mean Gaussian channels with the given variances."""

    variance: tuple
    seed: int = 0

    def __post_init__(self):
        v = tuple(float(s) for s in np.atleast_1d(self.variance))
        if not v or any(s < 0 or not np.isfinite(s) for s in v):
            raise ValueError(f"noise variances must be finite and nonnegative, got {v}")
        object.__setattr__(self, "variance", v)

    @property
    def q(self):
        return len(self.variance)

    def streams(self, traj_id: int):
        """(noise rng, solver rng) for one trajectory, independent of execution order."""
        ss = np.random.SeedSequence([int(self.seed), int(traj_id)])
        a, b = ss.spawn(2)
        return np.random.default_rng(a), np.random.default_rng(b)

    def draw(self, rng, size=None):
        shape = (self.q,) if size is None else (size, self.q)
        return rng.standard_normal(shape) * np.sqrt(self.variance)


@dataclass
class TrajectoryRecord:
    traj_id: int
    states: np.ndarray              # (n_steps + 1, d)
    inputs: np.ndarray              # (n_steps, m)
    values: np.ndarray              # planner value per step
    wall_times: np.ndarray          # seconds per step
    iterations: np.ndarray          # outer-loop iterations per step
    terminal_trace: np.ndarray      # trace(S_f P_N) of each plan (nan without S_f)
    planned_next: np.ndarray        # mu_1 of each plan, (n_steps, d)
    histories: list = field(default_factory=list)
    truncated: bool = False
    reason: str = ""

    @property
    def n_steps(self):
        return len(self.inputs)


def _rollout(args) -> TrajectoryRecord:
    spec, x_bar, T, traj_id, noise, budget, opts = args
    model = spec.model
    noise_rng, solver_rng = noise.streams(traj_id)
    x = np.asarray(x_bar, dtype=float).copy()
    states, inputs, values, walls, iters, traces, nexts, hist = [x.copy()], [], [], [], [], [], [], []
    warm = None
    truncated, reason = False, ""
    S_f = spec.constraints.S_f
    for t in range(T):
        t0 = time.perf_counter()
        pol = solve_drmpc(spec, x, budget, solver_rng, opts, warm_start=warm)
        wall = time.perf_counter() - t0
        if pol.status is not Status.OPTIMAL:
            truncated, reason = True, f"t={t}: planner returned {pol.status.value}"
            log.warning("trajectory %d truncated at %s", traj_id, reason)
            break
        # mu_0 = x, so the feedback term vanishes and the applied input is ubar_0
        u = pol.stages.u_bar[0].copy()
        w = noise.draw(noise_rng)
        inputs.append(u)
        values.append(pol.value)
        walls.append(wall)
        iters.append(pol.iterations)
        traces.append(float(np.trace(S_f @ pol.stages.P_N)) if S_f is not None else np.nan)
        nexts.append(pol.stages.mu[1].copy())
        hist.append(list(pol.history))
        warm = pol.samples
        x = step(model, x, u, w)
        states.append(x.copy())
    d, m = model.d, model.m
    return TrajectoryRecord(traj_id, np.array(states).reshape(-1, d), np.array(inputs).reshape(-1, m),
                            np.array(values), np.array(walls), np.array(iters, dtype=int),
                            np.array(traces), np.array(nexts).reshape(-1, d), hist, truncated, reason)


def worker_count(n_jobs: int, requested: int | None = None) -> int:
    cap = requested
    if cap is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                cap = int(env)
            except ValueError as exc:
                raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from exc
        else:
            cap = os.cpu_count() or 1
    if cap < 1:
        raise ValueError(f"worker count must be >= 1, got {cap}")
    return max(1, min(cap, n_jobs))


def run_closed_loop(spec: DrmpcSpec, x_bar, T: int, n_traj: int, noise: NoiseModel,
                    budget: StoppingConfig, opts: SolverOptions | None = None,
                    workers: int | None = None) -> list[TrajectoryRecord]:
    """Simulate ``n_traj`` receding-horizon trajectories of length ``T``.

    Each trajectory draws its noise and its solver samples from streams
    derived from (noise.seed, trajectory id), so records do not depend on the
    number of workers or the scheduling order.
    """
    if T < 1 or n_traj < 1:
        raise ValueError("T and n_traj must be >= 1")
    if noise.q != spec.model.q:
        raise ValueError(f"noise model has {noise.q} channels, system has {spec.model.q}")
    x_bar = np.asarray(x_bar, dtype=float).reshape(-1)
    jobs = [(spec, x_bar, int(T), k, noise, budget, opts) for k in range(n_traj)]
    nw = worker_count(n_traj, workers)
    if nw == 1:
        records = [_rollout(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            records = list(ex.map(_rollout, jobs))
    return sorted(records, key=lambda r: r.traj_id)


def violation_stats(records, constraints: ConstraintSpec) -> list[dict]:
    """Per constraint row and step: empirical mean of the left-hand side over trajectories."""
    out = []
    rows = [("state", l, r) for l, r in enumerate(constraints.state)]
    rows += [("state_action", l, r) for l, r in enumerate(constraints.state_action)]
    if not rows or not records:
        return out
    horizon = max(len(r.states) for r in records)
    for kind, l, row in rows:
        ts, means, errs, counts, flags = [], [], [], [], []
        for t in range(horizon):
            vals = []
            for rec in records:
                if kind == "state" and t < len(rec.states):
                    vals.append(row.lhs(rec.states[t]))
                elif kind == "state_action" and t < rec.n_steps:
                    vals.append(row.lhs(np.concatenate([rec.states[t], rec.inputs[t]])))
            if not vals:
                continue
            v = np.array(vals)
            se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
            ts.append(t)
            means.append(float(v.mean()))
            errs.append(se)
            counts.append(len(v))
            flags.append(bool(v.mean() > row.beta))
        out.append({"kind": kind, "row": l, "bound": row.beta, "t": ts, "mean": means,
                    "stderr": errs, "count": counts, "exceeded": flags})
    return out
