"""Semi-infinite SDPs solved by sampled exact relaxation.

The problem is

    minimize <C, X>  s.t.  <A, X> <= b  for all A in U,
                           v'Xv >= 0     for all v in the unit ball K,

over symmetric X.  For a tuple of sampled indices (A^j, v_j) the relaxed
program keeps only those constraints; its value G is a lower bound of the
true value, and the supremum of G over tuples of length n(n+1)/2 equals it.
``solve_sisdp`` approaches that supremum by random search with a running max.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .sdp_core import (ConicProgram, LmiBlock, NumericalFailure, SolverOptions, Status, as_sym,
                       min_eig, smat, solve, svec_basis, sym_dim)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- index sets


@dataclass(frozen=True, eq=False)
class FiniteList:
    members: tuple

    def __post_init__(self):
        mats = tuple(as_sym(M, f"U member {i}") for i, M in enumerate(self.members))
        if not mats:
            raise ValueError("FiniteList needs at least one member")
        if len({M.shape for M in mats}) != 1:
            raise ValueError("FiniteList members must share one order")
        object.__setattr__(self, "members", mats)

    @property
    def order(self):
        return self.members[0].shape[0]

    def sample(self, rng):
        return self.members[int(rng.integers(len(self.members)))]

    def contains(self, A, tol=1e-9):
        return any(np.abs(A - M).max() <= tol for M in self.members)

    def grid(self, g):
        return np.array(self.members)


@dataclass(frozen=True, eq=False)
class MatrixBox:
    """Symmetric matrices with lower <= A <= upper entrywise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = as_sym(self.lower, "U lower"), as_sym(self.upper, "U upper")
        if lo.shape != hi.shape:
            raise ValueError("MatrixBox bounds must share one order")
        if np.any(lo > hi):
            raise ValueError("MatrixBox requires lower <= upper entrywise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def order(self):
        return self.lower.shape[0]

    def sample(self, rng):
        n = self.order
        iu = np.triu_indices(n)
        vals = rng.uniform(self.lower[iu], self.upper[iu])
        return smat(vals, n)

    def contains(self, A, tol=1e-9):
        return bool(np.all(A >= self.lower - tol) and np.all(A <= self.upper + tol)
                    and np.abs(A - A.T).max() <= tol)

    def grid(self, g):
        """Tensor grid over the free entries with at most ``g`` points; corners included."""
        n = self.order
        iu = np.triu_indices(n)
        lo, hi = self.lower[iu], self.upper[iu]
        free = np.flatnonzero(hi > lo)
        levels = max(2, int(np.floor(g ** (1.0 / max(len(free), 1)) + 1e-9)))
        axes = [np.linspace(lo[k], hi[k], levels) for k in free]
        pts = []
        for combo in product(*axes):
            vals = lo.copy()
            vals[free] = combo
            pts.append(smat(vals, n))
        return np.array(pts)


@dataclass(frozen=True, eq=False)
class Segment:
    """Convex combinations (1 - theta) A0 + theta A1, theta in [0, 1]."""

    A0: np.ndarray
    A1: np.ndarray

    def __post_init__(self):
        A0, A1 = as_sym(self.A0, "U A0"), as_sym(self.A1, "U A1")
        if A0.shape != A1.shape:
            raise ValueError("Segment endpoints must share one order")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A1", A1)

    @property
    def order(self):
        return self.A0.shape[0]

    def at(self, theta):
        return (1.0 - theta) * self.A0 + theta * self.A1

    def sample(self, rng):
        return self.at(float(rng.uniform()))

    def contains(self, A, tol=1e-9):
        D = self.A1 - self.A0
        dd = float(np.sum(D * D))
        if dd == 0.0:
            return np.abs(A - self.A0).max() <= tol
        theta = float(np.sum((A - self.A0) * D)) / dd
        theta = min(1.0, max(0.0, theta))
        return np.abs(A - self.at(theta)).max() <= tol

    def grid(self, g):
        return np.array([self.at(t) for t in np.linspace(0.0, 1.0, max(int(g), 2))])


IndexSet = FiniteList | MatrixBox | Segment


# ---------------------------------------------------------------- problem data


@dataclass(frozen=True, eq=False)
class SisdpProblem:
    C: np.ndarray
    b: float
    U: IndexSet
    check_slater: bool = False

    def __post_init__(self):
        C = as_sym(self.C, "C")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "b", float(self.b))
        if self.U.order != C.shape[0]:
            raise ValueError(f"index set order {self.U.order} does not match C order {C.shape[0]}")
        if self.check_slater:
            margin = slater_margin(self)
            if margin <= 0:
                warnings.warn(f"strict-feasibility probe margin {margin:.3g} <= 0", stacklevel=2)

    @property
    def n(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class IndexTuple:
    """Sampled constraint indices d_j = (A^j, v_j), j = 1..len."""

    A: np.ndarray      # (L, n, n)
    v: np.ndarray      # (L, n)

    def __len__(self):
        return len(self.A)


@dataclass
class GEvaluation:
    value: float
    X: np.ndarray | None
    status: Status


def decision_dim(problem: SisdpProblem) -> int:
    return sym_dim(problem.n)


def _check_tuple(problem: SisdpProblem, d: IndexTuple):
    n = problem.n
    A = np.asarray(d.A, dtype=float)
    v = np.asarray(d.v, dtype=float)
    if A.ndim != 3 or A.shape[1:] != (n, n) or v.shape != (len(A), n):
        raise ValueError(f"index tuple: expected A of shape (L, {n}, {n}) and v of shape (L, {n}), "
                         f"got {A.shape} and {v.shape}")
    for j in range(len(A)):
        if np.abs(A[j] - A[j].T).max() > 1e-9 * max(1.0, np.abs(A[j]).max()):
            raise ValueError(f"index tuple entry {j}: A^j is not symmetric")
        if not problem.U.contains(A[j], tol=1e-8 * max(1.0, np.abs(A[j]).max())):
            raise ValueError(f"index tuple entry {j}: A^j is not in the index set U")
        if np.linalg.norm(v[j]) > 1.0 + 1e-12:
            raise ValueError(f"index tuple entry {j}: |v_j| = {np.linalg.norm(v[j]):.6g} > 1")
    return A, v


def build_relaxed_program(problem: SisdpProblem, d: IndexTuple) -> ConicProgram:
    """Finite LP over the upper-triangle entries of X keeping only the sampled rows.

    Rows are emitted per tuple entry, literally and in order:
    ``<A^j, X> <= b`` then ``-v_j' X v_j <= 0``.
    """
    A, v = _check_tuple(problem, d)
    E = svec_basis(problem.n)
    rows, rhs, names = [], [], []
    for j in range(len(A)):
        rows.append(np.einsum("kij,ij->k", E, A[j]))
        rhs.append(problem.b)
        names.append(f"<A^{j},X> <= b")
        rows.append(-np.einsum("kij,i,j->k", E, v[j], v[j]))
        rhs.append(0.0)
        names.append(f"v_{j}'Xv_{j} >= 0")
    c = np.einsum("kij,ij->k", E, problem.C)
    pairs = [(i, j) for i in range(problem.n) for j in range(i, problem.n)]
    return ConicProgram(c=c, A_ub=np.array(rows), b_ub=np.array(rhs),
                        names={"variables": [f"X[{i},{j}]" for i, j in pairs], "ineq": names})


def eval_G(problem: SisdpProblem, d: IndexTuple, opts: SolverOptions | None = None,
           recover: bool = True) -> GEvaluation:
    """Value of the relaxed program; with ``recover`` also its minimum-norm minimizer."""
    prog = build_relaxed_program(problem, d)
    res = solve(prog, opts)
    if res.status is Status.UNBOUNDED:
        return GEvaluation(-np.inf, None, res.status)
    if res.status is Status.INFEASIBLE:
        return GEvaluation(np.inf, None, res.status)
    if res.status is not Status.OPTIMAL:
        raise NumericalFailure(f"relaxed program solve failed ({res.message})")
    X = smat(res.x, problem.n)
    if recover:
        X = recover_minimizer(prog, res.value, problem.n, opts, fallback=X)
    return GEvaluation(res.value, X, res.status)


def recover_minimizer(prog: ConicProgram, value: float, n: int, opts: SolverOptions | None = None,
                      fallback=None) -> np.ndarray:
    """Smallest-Frobenius-norm X among points of the relaxed set with objective <= value + tol.

    The relaxed minimizer set is often an unbounded face; this picks a
    deterministic, bounded representative of it.
    """
    opts = opts or SolverOptions()
    p = prog.p
    weights = np.array([1.0 if i == j else np.sqrt(2.0) for i in range(n) for j in range(i, n)])
    tol = opts.eps_gap * max(1.0, abs(value))
    # [[t, (Dx)'], [Dx, t I]] >= 0  <=>  t >= |X|_F
    terms = {}
    for k in range(p):
        M = np.zeros((p + 1, p + 1))
        M[0, k + 1] = M[k + 1, 0] = weights[k]
        terms[k] = M
    terms[p] = np.eye(p + 1)
    cone = LmiBlock.from_terms(np.zeros((p + 1, p + 1)), terms, "norm")
    A = np.hstack([np.vstack([prog.A_ub, prog.c]), np.zeros((prog.n_ineq + 1, 1))])
    b = np.append(prog.b_ub, value + tol)
    c = np.zeros(p + 1)
    c[-1] = 1.0
    res = solve(ConicProgram(c=c, lmis=[cone], A_ub=A, b_ub=b), opts)
    if res.status is not Status.OPTIMAL:
        log.warning("minimum-norm recovery failed (%s); keeping interior-point minimizer", res.message)
        return fallback
    return smat(res.x[:p], n)


def sample_unit_ball(n: int, rng) -> np.ndarray:
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    return u * rng.uniform() ** (1.0 / n)


def sample_index_tuple(problem: SisdpProblem, rng, length: int | None = None) -> IndexTuple:
    L = decision_dim(problem) if length is None else int(length)
    A = np.array([problem.U.sample(rng) for _ in range(L)])
    v = np.array([sample_unit_ball(problem.n, rng) for _ in range(L)])
    return IndexTuple(A, v)


# ---------------------------------------------------------------- outer loop


@dataclass(frozen=True)
class StoppingConfig:
    """Stop after ``max_iters`` iterations or ``patience`` iterations without improvement."""

    max_iters: int = 200
    patience: int = 50
    delta_improve: float = 1e-6
    tuple_length: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class SisdpResult:
    value: float
    X: np.ndarray | None
    iterations: int
    history: list = field(default_factory=list)      # running max after each iteration
    evaluations: list = field(default_factory=list)  # G^k
    status: Status = Status.OPTIMAL
    best_tuple: IndexTuple | None = None


def solve_sisdp(problem: SisdpProblem, budget: StoppingConfig, rng, opts: SolverOptions | None = None,
                seed_tuples=()) -> SisdpResult:
    """Random-search maximization of G; ``seed_tuples`` are evaluated before any sample."""
    g_max, best_X, best_d = -np.inf, None, None
    history, evals = [], []
    since, k, failures = 0, 0, 0
    seeds = list(seed_tuples)
    while k < budget.max_iters and since < budget.patience:
        d = seeds.pop(0) if seeds else sample_index_tuple(problem, rng, budget.tuple_length)
        k += 1
        try:
            ev = eval_G(problem, d, opts, recover=False)
        except NumericalFailure as exc:
            log.warning("iteration %d: %s", k, exc)
            failures += 1
            since += 1
            history.append(g_max)
            evals.append(np.nan)
            continue
        evals.append(ev.value)
        if ev.status is Status.INFEASIBLE:
            # only possible when strict feasibility fails; such a tuple carries no bound
            log.warning("iteration %d: relaxed program infeasible", k)
            failures += 1
            since += 1
            history.append(g_max)
            continue
        improved = ev.value > g_max + budget.delta_improve or (np.isinf(g_max) and ev.value > g_max)
        if ev.value >= g_max:
            if ev.X is not None:
                # recovery is only needed for iterates that become the incumbent
                ev.X = recover_minimizer(build_relaxed_program(problem, d), ev.value, problem.n,
                                         opts, fallback=ev.X)
            g_max, best_X, best_d = ev.value, ev.X, d
        since = 0 if improved else since + 1
        history.append(g_max)
    if failures == k:
        raise NumericalFailure(f"all {k} relaxed solves failed")
    status = Status.OPTIMAL if np.isfinite(g_max) else Status.UNBOUNDED
    return SisdpResult(g_max, best_X, k, history, evals, status, best_d)


def verify_feasibility(X, problem: SisdpProblem, g: int = 1000) -> float:
    """Max violation of the full constraint family over a grid of U (exact in v)."""
    X = as_sym(X, "X")
    pts = problem.U.grid(g)
    worst = float(np.max(np.einsum("gij,ij->g", pts, X))) - problem.b
    return max(0.0, worst, -min_eig(X))


def slater_margin(problem: SisdpProblem, g: int = 50) -> float:
    """max t s.t. <A, X> <= b - t on a coarse grid of U and X >= t I (t capped at 1)."""
    n = problem.n
    E = svec_basis(n)
    p = sym_dim(n) + 1
    pts = problem.U.grid(g)
    rows = [np.append(np.einsum("kij,ij->k", E, A), 1.0) for A in pts]
    rows.append(np.append(np.zeros(p - 1), 1.0))
    rhs = [problem.b] * len(pts) + [1.0]
    terms = {k: E[k] for k in range(p - 1)}
    terms[p - 1] = -np.eye(n)
    lmi = LmiBlock.from_terms(np.zeros((n, n)), terms, "X - tI")
    c = np.zeros(p)
    c[-1] = -1.0
    res = solve(ConicProgram(c=c, lmis=[lmi], A_ub=np.array(rows), b_ub=np.array(rhs)))
    if res.status is Status.OPTIMAL:
        return float(res.x[-1])
    return -np.inf
