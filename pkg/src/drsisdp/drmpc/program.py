"""LMI assembly of the relaxed DRMPC program and the sampled outer loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..sdp_core import ConicProgram, LmiBlock, SolveResult, SolverOptions, Status, solve
from ..sdp_core.affine import Affine, VariableMap, block
from ..sisdp import StoppingConfig
from .model import (EPS_STRICT, DrmpcSpec, PolicyParams, StageVariables, SystemModel,
                    recover_gains)

log = logging.getLogger(__name__)


@dataclass
class StageRefs:
    """Affine views of the stage variables; t = 0 quantities fixed by the measured state."""

    u_bar: list
    mu: list
    Sigma: list
    U: list
    P: list
    P_N: Affine
    r0: Affine
    vars: VariableMap


def allocate_stage_variables(spec: DrmpcSpec, x_bar) -> StageRefs:
    d, m, N = spec.model.d, spec.model.m, spec.N
    x_bar = np.asarray(x_bar, dtype=float).reshape(d, 1)
    vm = VariableMap()
    u_bar, mu, Sigma, U, P = [], [Affine(x_bar)], [Affine(np.zeros((d, d)))], [Affine(np.zeros((m, d)))], []
    for t in range(N):
        u_bar.append(vm.vector(m, f"ubar{t}"))
        P.append(vm.sym(d + m, f"P{t}"))
        if t >= 1:
            mu.append(vm.vector(d, f"mu{t}"))
            Sigma.append(vm.sym(d, f"Sigma{t}"))
            U.append(vm.matrix(m, d, f"U{t}"))
    mu.append(vm.vector(d, f"mu{N}"))
    Sigma.append(vm.sym(d, f"Sigma{N}"))
    P_N = vm.sym(d, f"PxN")
    r0 = vm.scalar("r0")
    return StageRefs(u_bar, mu, Sigma, U, P, P_N, r0, vm)


class CovarianceTemplate:
    """Covariance LMIs written as base + sum_j sqrt(sigma_j) * noise_j, per stage.

    For t >= 1 the block is the arrow matrix with diagonal
    (Sigma_{t+1}, Sigma_t, Sigma_t per channel, 1 per channel); its Schur
    complement is exactly the covariance recursion.  For t = 0 (Sigma_0 = 0)
    only the D-bar column survives.
    """

    def __init__(self, model: SystemModel, refs: StageRefs):
        self.stages = []
        N = len(refs.u_bar)
        d, q = model.d, model.q
        for t in range(N):
            Sn, St, mu, ub, U = refs.Sigma[t + 1], refs.Sigma[t], refs.mu[t], refs.u_bar[t], refs.U[t]
            if t == 0:
                dbar = [model.C[j] @ mu + model.D[j] @ ub for j in range(q)]
                base = block([[Sn, np.zeros((d, q))], [np.zeros((q, d)), np.eye(q)]])
                noise = []
                for j in range(q):
                    col = [np.zeros((d, 1))] * q
                    col[j] = dbar[j]
                    W = block([col])
                    noise.append(block([[np.zeros((d, d)), W], [W.T, np.zeros((q, q))]]))
            else:
                L0 = model.A @ St + model.B @ U
                k = 2 * d + q * (d + 1)
                diag = [Sn, St] + [St] * q + [np.ones((1, 1))] * q
                sizes = [d, d] + [d] * q + [1] * q
                rows = [[None] * len(diag) for _ in diag]
                for i, Dg in enumerate(diag):
                    rows[i][i] = Dg
                rows[0][1] = L0
                rows[1][0] = L0.T
                for i in range(len(diag)):
                    for jj in range(len(diag)):
                        if rows[i][jj] is None:
                            rows[i][jj] = np.zeros((sizes[i], sizes[jj]))
                base = block(rows)
                noise = []
                for j in range(q):
                    L1 = model.C[j] @ St + model.D[j] @ U
                    L2 = model.C[j] @ mu + model.D[j] @ ub
                    Mj = [[np.zeros((sizes[i], sizes[jj])) for jj in range(len(diag))] for i in range(len(diag))]
                    Mj[0][2 + j], Mj[2 + j][0] = L1, L1.T
                    Mj[0][2 + q + j], Mj[2 + q + j][0] = L2, L2.T
                    noise.append(block(Mj))
                assert base.shape == (k, k)
            self.stages.append(self._aligned(base, noise, t))

    @staticmethod
    def _aligned(base: Affine, noise: list, t: int):
        idx = sorted(set(base.terms).union(*(n.terms for n in noise)))
        k = base.shape[0]

        def arrays(a: Affine):
            C = np.zeros((len(idx), k, k))
            for r, i in enumerate(idx):
                if i in a.terms:
                    C[r] = a.terms[i]
            return a.const, C

        b0, bC = arrays(base)
        parts = [arrays(n) for n in noise]
        n0 = np.array([p[0] for p in parts])
        nC = np.array([p[1] for p in parts])
        return t, np.array(idx, dtype=np.int64), b0, bC, n0, nC

    def instantiate(self, sigma) -> list[LmiBlock]:
        sq = np.sqrt(np.asarray(sigma, dtype=float))
        out = []
        for t, idx, b0, bC, n0, nC in self.stages:
            F0 = b0 + np.tensordot(sq, n0, axes=1)
            C = bC + np.tensordot(sq, nC, axes=1)
            keep = np.any(C != 0, axis=(1, 2))
            out.append(LmiBlock(F0, idx[keep], C[keep], name=f"cov[t={t}]"))
        return out


def build_stage_lmis(model: SystemModel, refs: StageRefs, sigma_w) -> list[LmiBlock]:
    return CovarianceTemplate(model, refs).instantiate(np.diag(sigma_w) if np.ndim(sigma_w) == 2 else sigma_w)


def build_moment_lmis(refs: StageRefs, eps_strict: float = EPS_STRICT) -> list[LmiBlock]:
    """Second-moment LMIs for every stage, the terminal one, and Sigma_t >= eps I floors."""
    N = len(refs.u_bar)
    d = refs.mu[0].shape[0]
    out = []
    for t in range(N):
        if t == 0:
            h = block([[refs.mu[0]], [refs.u_bar[0]]])
            M = block([[refs.P[0], h], [h.T, np.ones((1, 1))]])
        else:
            G = block([[refs.Sigma[t], refs.U[t].T], [refs.mu[t].T, refs.u_bar[t].T]])
            Dg = block([[refs.Sigma[t], np.zeros((d, 1))], [np.zeros((1, d)), np.ones((1, 1))]])
            M = block([[refs.P[t], G.T], [G, Dg]])
        out.append(M.to_lmi(f"moment[t={t}]"))
    term = block([[refs.P_N - refs.Sigma[N], refs.mu[N]], [refs.mu[N].T, np.ones((1, 1))]])
    out.append(term.to_lmi("moment[t=N]"))
    for t in range(1, N + 1):
        out.append((refs.Sigma[t] - eps_strict * np.eye(d)).to_lmi(f"Sigma[{t}] >= eps I"))
    return out


def _linear_row(lin: dict, const: float, bound: float, name: str):
    return lin, bound - const, name


def build_trace_constraints(cost, constraints, refs: StageRefs) -> list:
    """Rows (coefficients, rhs, name) meaning sum_i coef_i x_i <= rhs."""
    N = len(refs.u_bar)
    d = refs.mu[0].shape[0]
    rows = []
    for t in range(constraints.state_action_from, N):
        z = block([[refs.mu[t]], [refs.u_bar[t]]])
        for l, row in enumerate(constraints.state_action):
            lin, c0 = refs.P[t].traced(row.H)
            lin2, c1 = z.T.traced(row.f.reshape(-1, 1))
            rows.append(_linear_row(_merge(lin, lin2), c0 + c1, row.beta, f"state-action[{l}] t={t}"))
    for t in range(1, N + 1):
        Px = refs.P_N if t == N else _top_left(refs.P[t], d)
        for l, row in enumerate(constraints.state):
            lin, c0 = Px.traced(row.H)
            lin2, c1 = refs.mu[t].T.traced(row.f.reshape(-1, 1))
            rows.append(_linear_row(_merge(lin, lin2), c0 + c1, row.beta, f"state[{l}] t={t}"))
    if constraints.S_f is not None and np.isfinite(constraints.alpha):
        lin, c0 = refs.P_N.traced(constraints.S_f)
        rows.append(_linear_row(lin, c0, constraints.alpha, "terminal trace(S_f P_N) <= alpha"))
    # epigraph: sum_t tr(M P_t) + tr(S P_N) - r0 <= 0
    total: dict = {}
    const = 0.0
    for t in range(N):
        lin, c0 = refs.P[t].traced(cost.M)
        total = _merge(total, lin)
        const += c0
    lin, c0 = refs.P_N.traced(cost.S)
    total = _merge(total, lin)
    const += c0
    lin, c0 = (-refs.r0).traced(np.ones((1, 1)))
    rows.append(_linear_row(_merge(total, lin), const + c0, 0.0, "epigraph"))
    return rows


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for i, v in b.items():
        out[i] = out.get(i, 0.0) + v
    return out


def _top_left(P: Affine, d: int) -> Affine:
    sel = np.eye(P.shape[0])[:, :d]
    return sel.T @ P @ sel


class DrmpcProgram:
    """Sample-independent part of the relaxed program at a fixed initial state."""

    def __init__(self, spec: DrmpcSpec, x_bar):
        self.spec = spec
        self.x_bar = np.asarray(x_bar, dtype=float).reshape(-1)
        if self.x_bar.shape != (spec.model.d,):
            raise ValueError(f"initial state must have length {spec.model.d}")
        refs = allocate_stage_variables(spec, self.x_bar)
        self.refs = refs
        p = refs.vars.size
        self.p = p
        self.shared = build_moment_lmis(refs)
        rows = build_trace_constraints(spec.cost, spec.constraints, refs)
        r0_idx = next(iter(refs.r0.terms))
        rows.append(({r0_idx: -1.0}, 0.0, "r0 >= 0"))
        self.A_ub = np.zeros((len(rows), p))
        self.b_ub = np.zeros(len(rows))
        for r, (lin, rhs, _) in enumerate(rows):
            for i, v in lin.items():
                self.A_ub[r, i] = v
            self.b_ub[r] = rhs
        self.row_names = [name for _, _, name in rows]
        eq_rows, eq_rhs, eq_names = [], [], []
        model = spec.model
        for t in range(spec.N):
            res = refs.mu[t + 1] - (model.A @ refs.mu[t] + model.B @ refs.u_bar[t])
            for i in range(model.d):
                row = np.zeros(p)
                for j, M in res.terms.items():
                    row[j] = M[i, 0]
                eq_rows.append(row)
                eq_rhs.append(-res.const[i, 0])
                eq_names.append(f"mean[{t + 1}][{i}]")
        self.A_eq = np.array(eq_rows)
        self.b_eq = np.array(eq_rhs)
        self.eq_names = eq_names
        self.c = np.zeros(p)
        self.c[r0_idx] = 1.0
        self.template = CovarianceTemplate(model, refs)

    def program(self, samples) -> ConicProgram:
        lmis = list(self.shared)
        for s, sigma in enumerate(samples):
            for blk in self.template.instantiate(sigma):
                lmis.append(LmiBlock(blk.F0, blk.index, blk.coeffs, f"{blk.name}[sample {s}]"))
        return ConicProgram(c=self.c, lmis=lmis, A_ub=self.A_ub, b_ub=self.b_ub,
                            A_eq=self.A_eq, b_eq=self.b_eq,
                            names={"variables": self.refs.vars.names, "ineq": self.row_names,
                                   "eq": self.eq_names})

    def extract(self, x) -> StageVariables:
        r = self.refs
        N = self.spec.N
        return StageVariables(
            u_bar=np.array([a.value(x).ravel() for a in r.u_bar]),
            mu=np.array([a.value(x).ravel() for a in r.mu]),
            Sigma=np.array([a.value(x) for a in r.Sigma]),
            U=np.array([a.value(x) for a in r.U]),
            P=np.array([a.value(x) for a in r.P[:N]]),
            P_N=r.P_N.value(x),
            r0=float(r.r0.value(x)[0, 0]),
        )


@dataclass
class GbarEvaluation:
    value: float
    stages: StageVariables | None
    status: Status
    result: SolveResult | None = None


def _validated(samples, ambiguity):
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.shape[1] != ambiguity.q:
        raise ValueError(f"covariance samples must have {ambiguity.q} diagonal entries, got shape {S.shape}")
    for s in S:
        if not ambiguity.contains(s):
            raise ValueError(f"covariance sample {s} is outside the ambiguity parameter set")
    return S


def reduce_samples(S, prune_dominated: bool = True):
    """Drop repeated samples and, optionally, samples dominated elementwise by another.

    Each covariance LMI is monotone in every sigma_j (the noise terms enter the
    Schur complement as sigma_j times a PSD matrix), so a dominated sample only
    adds an implied constraint and removing it leaves the program's value unchanged.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    _, first = np.unique(S, axis=0, return_index=True)
    S = S[np.sort(first)]
    if not prune_dominated or len(S) == 1:
        return S
    keep = []
    for s in S:
        dom = np.all(S >= s, axis=1) & np.any(S > s, axis=1)
        keep.append(not dom.any())
    return S[np.array(keep)]


def eval_Gbar(spec: DrmpcSpec, x_bar, samples, opts: SolverOptions | None = None,
              program: DrmpcProgram | None = None, prune_dominated: bool = False) -> GbarEvaluation:
    program = program or DrmpcProgram(spec, x_bar)
    S = reduce_samples(_validated(samples, spec.ambiguity), prune_dominated)
    res = solve(program.program(S), opts)
    if res.status is Status.OPTIMAL:
        return GbarEvaluation(res.value, program.extract(res.x), res.status, res)
    return GbarEvaluation(np.nan, None, res.status, res)


def sample_covariance_tuple(spec: DrmpcSpec, rng, length: int | None = None):
    L = spec.default_tuple_length() if length is None else int(length)
    amb = spec.ambiguity
    return np.array([amb.sample(rng) for _ in range(L)])


def solve_drmpc(spec: DrmpcSpec, x_bar, budget: StoppingConfig, rng, opts: SolverOptions | None = None,
                warm_start=None, prune_dominated: bool = True) -> PolicyParams:
    """Sampled maximization of G-bar over covariance tuples.

    Iteration 0 uses the corner tuple (gamma * sigma_hat repeated); if
    ``warm_start`` is given it is evaluated next.  Remaining iterations draw
    tuples uniformly from the ambiguity parameter set.  With
    ``prune_dominated`` each tuple is reduced to its non-dominated samples
    before assembly, which leaves every evaluated value unchanged.
    """
    program = DrmpcProgram(spec, x_bar)
    L = budget.tuple_length or spec.default_tuple_length()
    queue = [np.tile(spec.ambiguity.corner, (L, 1))]
    if warm_start is not None:
        queue.append(np.atleast_2d(np.asarray(warm_start, dtype=float)))
    g_max, best, best_S = -np.inf, None, None
    cache: dict = {}
    history = []
    since = k = infeasible = 0
    while k < budget.max_iters and since < budget.patience:
        S = queue.pop(0) if queue else sample_covariance_tuple(spec, rng, L)
        k += 1
        # identical reduced sample sets give identical programs; solve each once
        key = reduce_samples(_validated(S, spec.ambiguity), prune_dominated).tobytes()
        ev = cache.get(key)
        if ev is None:
            ev = cache[key] = eval_Gbar(spec, x_bar, S, opts, program, prune_dominated)
        if ev.status is not Status.OPTIMAL:
            if ev.status is Status.INFEASIBLE:
                infeasible += 1
            else:
                log.warning("DRMPC iteration %d: %s (%s)", k, ev.status.value, ev.result.message)
            since += 1
            history.append(g_max)
            continue
        improved = ev.value > g_max + budget.delta_improve
        if ev.value >= g_max:
            g_max, best, best_S = ev.value, ev, S
        since = 0 if improved else since + 1
        history.append(g_max)
    if best is None:
        status = Status.INFEASIBLE if infeasible else Status.NUMERICAL_FAILURE
        return PolicyParams(status, iterations=k, history=history, n_infeasible=infeasible)
    st = best.stages
    K = np.zeros_like(st.U)
    for t in range(1, spec.N):
        K[t] = recover_gains(st.Sigma[t], st.U[t], t)
    return PolicyParams(Status.OPTIMAL, g_max, st, K, k, history, best_S, infeasible)
