"""Primal-dual interior-point method for dense LMI programs.

The program ``minimize c'x s.t. F(x) = F0 + sum_i x_i F_i >= 0, A_ub x <= b_ub,
A_eq x = b_eq`` is solved together with its dual

    maximize  -<F0, Z> - b_eq'y   s.t.  A*(Z) = c + A_eq'y,  Z >= 0,

by an infeasible-start path-following method: Nesterov-Todd scaling, Mehrotra
predictor-corrector and separate primal/dual step lengths.  Scalar inequality
rows are treated as a nonnegative-orthant cone.  PSD blocks that share order
and variable support are stacked and processed with batched numpy kernels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .linalg import symmetrize
from .program import ConicProgram, LmiBlock

log = logging.getLogger(__name__)


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverOptions:
    eps_gap: float = 1e-7
    eps_feas: float = 1e-7
    max_ipm_iters: int = 200
    step_fraction: float = 0.98
    # infeasibility heuristic: primal residual above this level ...
    stall_residual: float = 1e-6
    # ... without progress for this many consecutive iterations
    stall_iters: int = 20


@dataclass
class SolveResult:
    status: Status
    value: float = float("nan")
    x: np.ndarray | None = None
    primal_obj: float = float("nan")
    dual_obj: float = float("nan")
    gap: float = float("nan")
    tolerance: float = float("nan")
    iterations: int = 0
    y_eq: np.ndarray | None = None
    z_ineq: np.ndarray | None = None
    Z: list = field(default_factory=list)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


_STACK_MIN = 8


class _Group:
    """A stack of PSD blocks with identical order and variable support."""

    def __init__(self, idx, F0s, Fs, members):
        self.idx = idx
        self.F0 = np.array(F0s)                      # (nb, k, k)
        self.F = np.array(Fs).reshape(len(F0s), len(idx), *self.F0.shape[1:])  # (nb, r, k, k)
        self.members = members
        self.nb, self.k = self.F0.shape[0], self.F0.shape[1]


class _Cone:
    """Product cone (PSD groups x orthant) plus the linear map x -> F(x)."""

    def __init__(self, prog: ConicProgram):
        # blocks sharing (order, support) are stacked; small stacks of equal order are
        # merged further, with supports padded to their union by zero coefficients
        exact: dict = {}
        for pos, blk in enumerate(prog.lmis):
            exact.setdefault((blk.order, blk.index.tobytes()), []).append(pos)
        merged: dict = {}
        for (k, key), members in exact.items():
            if len(members) >= _STACK_MIN:
                merged[(k, key)] = members
            else:
                merged.setdefault((k, None), []).extend(members)
        self.groups = []
        for (k, _), members in merged.items():
            blks = [prog.lmis[pos] for pos in members]
            idx = np.unique(np.concatenate([b.index for b in blks]))
            F = np.zeros((len(blks), len(idx), k, k))
            for j, b in enumerate(blks):
                F[j, np.searchsorted(idx, b.index)] = b.coeffs
            self.groups.append(_Group(idx, [b.F0 for b in blks], F, members))
        self.A = prog.A_ub                      # orthant part: s = b - A x
        self.b = prog.b_ub
        self.p = prog.p
        self.nl = len(self.b)
        self.degree = sum(g.nb * g.k for g in self.groups) + self.nl

    # cone vectors are (list of (nb, k, k) stacks, orthant vector)
    def affine(self, x):
        return self.lin(x, const=True)

    def lin(self, x, const=False):
        mats = []
        for g in self.groups:
            M = np.einsum("brij,r->bij", g.F, x[g.idx])
            mats.append(M + g.F0 if const else M)
        v = -(self.A @ x)
        if const:
            v = v + self.b
        return mats, v

    def adjoint(self, cv):
        mats, v = cv
        out = np.zeros(self.p)
        for g, M in zip(self.groups, mats):
            np.add.at(out, g.idx, np.einsum("brij,bij->r", g.F, M))
        out -= self.A.T @ v
        return out

    def const(self):
        return [g.F0 for g in self.groups], self.b.copy()

    def identity(self):
        return [np.broadcast_to(np.eye(g.k), g.F0.shape).copy() for g in self.groups], np.ones(self.nl)


def _add(a, b, alpha=1.0):
    return [x + alpha * y for x, y in zip(a[0], b[0])], a[1] + alpha * b[1]


def _scale(a, alpha):
    return [alpha * x for x in a[0]], alpha * a[1]


def _inner(a, b):
    return sum(float(np.einsum("bij,bij->", x, y)) for x, y in zip(a[0], b[0])) + float(a[1] @ b[1])


def _max_fro(a):
    m = max((float(np.sqrt(np.einsum("bij,bij->b", x, x)).max()) for x in a[0] if x.size), default=0.0)
    if a[1].size:
        m = max(m, float(np.abs(a[1]).max()))
    return m


def _min_eigs(a):
    """Smallest eigenvalue over all blocks and orthant entries."""
    vals = [float(np.linalg.eigvalsh(x)[:, 0].min()) for x in a[0] if x.size]
    if a[1].size:
        vals.append(float(a[1].min()))
    return min(vals) if vals else np.inf


class _Scaling:
    """Nesterov-Todd scaling: for each block R with R^-1 S R^-T = R' Z R = diag(lam)."""

    def __init__(self, S, Z):
        self.R, self.Rinv, self.lam = [], [], []
        for Sg, Zg in zip(S[0], Z[0]):
            Ls = np.linalg.cholesky(Sg)
            Lz = np.linalg.cholesky(Zg)
            U, lam, Vt = np.linalg.svd(np.swapaxes(Lz, -1, -2) @ Ls)
            isq = 1.0 / np.sqrt(lam)
            R = Ls @ np.swapaxes(Vt, -1, -2) * isq[:, None, :]
            # R^-1 = lam^-1/2 U' Lz' follows from Lz' Ls = U diag(lam) V' and avoids inverting Ls
            Rinv = isq[:, :, None] * (np.swapaxes(U, -1, -2) @ np.swapaxes(Lz, -1, -2))
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.lam.append(lam)
        s, z = S[1], Z[1]
        self.w = np.sqrt(s / z)             # W for the orthant
        self.lam_l = np.sqrt(s * z)

    def lam_cv(self):
        return [np.einsum("bi,ij->bij", l, np.eye(l.shape[1])) for l in self.lam], self.lam_l.copy()

    def scale_s(self, cv):
        """S-like vector to scaled space: R^-1 X R^-T."""
        mats = [Ri @ X @ np.swapaxes(Ri, -1, -2) for Ri, X in zip(self.Rinv, cv[0])]
        return mats, cv[1] / self.w

    def unscale_s(self, cv):
        mats = [R @ X @ np.swapaxes(R, -1, -2) for R, X in zip(self.R, cv[0])]
        return [symmetrize(m) for m in mats], cv[1] * self.w

    def unscale_z(self, cv):
        mats = [np.swapaxes(Ri, -1, -2) @ X @ Ri for Ri, X in zip(self.Rinv, cv[0])]
        return [symmetrize(m) for m in mats], cv[1] / self.w


def _step_length(lam, lam_l, d):
    """Largest alpha with lam + alpha*d in the cone (scaled space)."""
    amax = np.inf
    for l, D in zip(lam, d[0]):
        isq = 1.0 / np.sqrt(l)
        M = D * isq[:, :, None] * isq[:, None, :]
        e = np.linalg.eigvalsh(symmetrize(M))[:, 0].min()
        if e < 0:
            amax = min(amax, -1.0 / e)
    if lam_l.size:
        ratio = d[1] / lam_l
        if ratio.min() < 0:
            amax = min(amax, -1.0 / ratio.min())
    return amax


class _Kkt:
    """Factorization of [[H, E'], [E, 0]] with Jacobi equilibration, light
    regularization and iterative refinement."""

    def __init__(self, H, E):
        p, me = H.shape[0], E.shape[0]
        K = np.zeros((p + me, p + me))
        K[:p, :p] = H
        K[:p, p:] = E.T
        K[p:, :p] = E
        self.K = K
        self.p = p
        dg = np.abs(np.diag(K)).copy()
        if me:
            dg[p:] = np.abs(E).max(axis=1) ** 2 / max(1.0, dg[:p].max(initial=1.0))
        dg[dg <= 0] = 1.0
        self.d = 1.0 / np.sqrt(dg)
        Ks = K * self.d[:, None] * self.d[None, :]
        delta = 1e-14 * (1.0 + np.abs(np.diag(Ks)[:p]).max(initial=0.0))
        Ks[np.arange(p), np.arange(p)] += delta
        Ks[np.arange(p, p + me), np.arange(p, p + me)] -= delta
        self.chol = None
        if me == 0:
            try:
                self.chol = sla.cho_factor(Ks, check_finite=False)
            except np.linalg.LinAlgError:
                pass
        if self.chol is None:
            self.lu = sla.lu_factor(Ks, check_finite=False)

    def _raw(self, rhs):
        if self.chol is not None:
            return self.d * sla.cho_solve(self.chol, self.d * rhs, check_finite=False)
        return self.d * sla.lu_solve(self.lu, self.d * rhs, check_finite=False)

    def solve(self, r1, r2):
        rhs = np.concatenate([r1, r2])
        sol = self._raw(rhs)
        for _ in range(3):
            sol = sol + self._raw(rhs - self.K @ sol)
        return sol[: self.p], sol[self.p:]


def _normal_matrix(cone: _Cone, scaling: _Scaling | None):
    """H = A~*A~ and the scaled coefficient stacks F~ = R^-1 F_i R^-T."""
    H = np.zeros((cone.p, cone.p))
    Ft_all = []
    for gi, g in enumerate(cone.groups):
        if scaling is None:
            Ft = g.F
        else:
            Ri = scaling.Rinv[gi][:, None]
            Ft = Ri @ g.F @ np.swapaxes(Ri, -1, -2)
        Ft_all.append(Ft)
        flat = np.swapaxes(Ft, 0, 1).reshape(len(g.idx), -1)
        H[np.ix_(g.idx, g.idx)] += flat @ flat.T
    Al = cone.A if scaling is None else cone.A / scaling.w[:, None]
    H += Al.T @ Al
    return H, Ft_all, Al


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> SolveResult:
    """Solve a :class:`ConicProgram`; never raises on solver trouble, check ``status``.

    Equality rows are eliminated up front (x = x0 + N z with a sparse basis N
    from pivoted QR) so that the iteration only ever sees cone constraints;
    the saddle-point system with equalities loses accuracy on degenerate
    problems.
    """
    opts = opts or SolverOptions()
    if prog.n_eq == 0:
        return _solve_core(prog, opts)
    try:
        red = _eliminate_equalities(prog)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return SolveResult(Status.NUMERICAL_FAILURE, message=f"equality elimination failed: {exc}")
    if red is None:
        return SolveResult(Status.INFEASIBLE, message="equality constraints are inconsistent")
    rprog, x0, Nb, offset = red
    res = _solve_core(rprog, opts)
    if res.status is not Status.OPTIMAL:
        return res
    z = res.x
    x = x0 + Nb @ z
    res.x = x
    res.value = float(prog.c @ x)
    res.primal_obj += offset
    res.dual_obj += offset
    # equality multipliers from c - A*(Z) + A_eq'y = 0
    cone = _Cone(ConicProgram(c=prog.c, lmis=prog.lmis, A_ub=prog.A_ub, b_ub=prog.b_ub))
    groups_Z = []
    for g in cone.groups:
        groups_Z.append(np.array([res.Z[pos] for pos in g.members]))
    r = cone.adjoint((groups_Z, res.z_ineq)) - prog.c
    res.y_eq = np.linalg.lstsq(prog.A_eq.T, r, rcond=None)[0]
    return res


def _eliminate_equalities(prog: ConicProgram):
    E, f = prog.A_eq, prog.b_eq
    p = prog.p
    Qm, Rm, piv = sla.qr(E, pivoting=True, mode="economic")
    diag = np.abs(np.diag(Rm))
    tol = max(E.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    basic, free = piv[:rank], piv[rank:]
    R1, R2 = Rm[:rank, :rank], Rm[:rank, rank:]
    qf = Qm.T @ f
    x0 = np.zeros(p)
    x0[basic] = sla.solve_triangular(R1, qf[:rank])
    if np.abs(E @ x0 - f).max(initial=0.0) > 1e-9 * max(1.0, np.abs(f).max(initial=0.0)):
        return None
    Nb = np.zeros((p, len(free)))
    Nb[free, np.arange(len(free))] = 1.0
    Nb[basic] = -sla.solve_triangular(R1, R2)
    Nb[np.abs(Nb) < 1e-15 * max(1.0, np.abs(Nb).max(initial=0.0))] = 0.0
    lmis = []
    for blk in prog.lmis:
        sub = Nb[blk.index]
        cols = np.flatnonzero(np.any(sub != 0, axis=0))
        F0 = blk.F0 + np.tensordot(x0[blk.index], blk.coeffs, axes=1)
        coeffs = np.tensordot(sub[:, cols].T, blk.coeffs, axes=1)
        lmis.append(LmiBlock(F0, cols, coeffs, blk.name))
    A_ub = prog.A_ub @ Nb
    b_ub = prog.b_ub - prog.A_ub @ x0
    rprog = ConicProgram(c=Nb.T @ prog.c, lmis=lmis, A_ub=A_ub, b_ub=b_ub, names=prog.names)
    return rprog, x0, Nb, float(prog.c @ x0)


def _solve_core(prog: ConicProgram, opts: SolverOptions) -> SolveResult:
    cone = _Cone(prog)
    c, E, f = prog.c, prog.A_eq, prog.b_eq
    p = prog.p
    F0 = cone.const()
    nu = max(cone.degree, 1)
    cnorm = max(1.0, float(np.linalg.norm(c)))
    fnorm = max(1.0, float(np.abs(f).max(initial=0.0)))

    if cone.degree == 0:
        return SolveResult(Status.NUMERICAL_FAILURE, message="program has no cone constraints")

    # -- initial point: least-norm primal slack and dual multiplier, shifted into the cone
    H0, _, _ = _normal_matrix(cone, None)
    try:
        kkt0 = _Kkt(H0, E)
        x, _ = kkt0.solve(-cone.adjoint(F0), f)
        w, v = kkt0.solve(c, np.zeros(len(f)))
    except (np.linalg.LinAlgError, ValueError) as exc:
        return SolveResult(Status.NUMERICAL_FAILURE, message=f"initialization failed: {exc}")
    y = -v
    S = cone.affine(x)
    Z = cone.lin(w)
    eye = cone.identity()
    a = -_min_eigs(S)
    if a >= -1e-8:
        S = _add(S, eye, 1.0 + max(a, 0.0))
    a = -_min_eigs(Z)
    if a >= -1e-8:
        Z = _add(Z, eye, 1.0 + max(a, 0.0))

    best_pres = np.inf
    stall = 0
    status, message = Status.NUMERICAL_FAILURE, "iteration limit reached"
    it = 0
    for it in range(opts.max_ipm_iters + 1):
        Fx = cone.affine(x)
        rp = _add(Fx, S, -1.0)
        AZ = cone.adjoint(Z)
        rd = c - AZ + E.T @ y
        re = E @ x - f
        pobj = float(c @ x)
        dobj = -_inner(F0, Z) - float(f @ y)
        gap = _inner(S, Z)
        mu = gap / nu
        pres = max(_max_fro(rp), float(np.abs(re).max(initial=0.0)) / fnorm)
        # relative to the size of the terms being balanced, as in common conic solvers
        dres = float(np.linalg.norm(rd)) / max(cnorm, float(np.linalg.norm(AZ)))
        gap_abs = max(gap, abs(pobj - dobj))
        gap_tol = opts.eps_gap * max(1.0, min(abs(pobj), abs(dobj)))
        log.debug("it %3d pobj % .10e dobj % .10e gap %.2e pres %.2e dres %.2e",
                  it, pobj, dobj, gap, pres, dres)

        if pres <= opts.eps_feas and dres <= opts.eps_feas and gap_abs <= gap_tol:
            if _min_eigs(Fx) >= -opts.eps_feas:
                return _result(Status.OPTIMAL, cone, prog, x, y, Z, pobj, dobj, gap_abs, pres, dres, it)

        # certificates of infeasibility
        q = -(_inner(F0, Z) + float(f @ y))
        if q > 0 and float(np.linalg.norm(cone.adjoint(Z) - E.T @ y)) <= opts.eps_feas * q:
            status, message = Status.INFEASIBLE, "dual improving ray (primal infeasibility certificate)"
            break
        q = -pobj
        if q > 0:
            Ax = cone.lin(x)
            if (_min_eigs(Ax) >= -opts.eps_feas * q and
                    float(np.abs(E @ x).max(initial=0.0)) <= opts.eps_feas * q and
                    float(np.linalg.norm(x)) > 1e6 * max(1.0, _max_fro(F0))):
                status, message = Status.UNBOUNDED, "primal improving ray (objective unbounded below)"
                break
        if pres > opts.stall_residual:
            if pres < 0.99 * best_pres:
                stall = 0
            else:
                stall += 1
            if stall >= opts.stall_iters:
                status, message = Status.INFEASIBLE, "primal residual stalled (heuristic)"
                break
        best_pres = min(best_pres, pres)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e14:
            message = "iterates diverged"
            break
        if it == opts.max_ipm_iters:
            break

        try:
            sc = _Scaling(S, Z)
            H, Ft, Al = _normal_matrix(cone, sc)
            kkt = _Kkt(H, E)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            message = f"scaling/factorization failed: {exc}"
            break
        rp_s = sc.scale_s(rp)

        def newton(T):
            Mt = _add(T, rp_s, -1.0)
            g = -rd.copy()
            for gi, grp in enumerate(cone.groups):
                np.add.at(g, grp.idx, np.einsum("brij,bij->r", Ft[gi], Mt[0][gi]))
            g -= Al.T @ Mt[1]
            dx, dy = kkt.solve(g, -re)
            Adx = ([np.einsum("brij,r->bij", Ft[gi], dx[grp.idx]) for gi, grp in enumerate(cone.groups)],
                   -(Al @ dx))
            dZt = _add(Mt, Adx, -1.0)
            if len(f) == 0:
                # refine against A*(dZ) = rd measured in unscaled space; dx and dZ move
                # together so the primal cancellation dS = rp + A dx stays exact
                for _ in range(2):
                    r = rd - cone.adjoint(sc.unscale_z(dZt))
                    delta, _ = kkt.solve(r, np.zeros(0))
                    dx = dx - delta
                    corr = ([np.einsum("brij,r->bij", Ft[gi], delta[grp.idx])
                             for gi, grp in enumerate(cone.groups)], -(Al @ delta))
                    dZt = _add(dZt, corr, 1.0)
            dSt = _add(T, dZt, -1.0)
            return dx, dy, dSt, dZt

        lam = sc.lam
        lam_l = sc.lam_l
        # predictor
        T_aff = _scale(sc.lam_cv(), -1.0)
        dx, dy, dSt, dZt = newton(T_aff)
        ap = min(1.0, _step_length(lam, lam_l, dSt))
        ad = min(1.0, _step_length(lam, lam_l, dZt))
        lcv = sc.lam_cv()
        mu_aff = _inner(_add(lcv, dSt, ap), _add(lcv, dZt, ad)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0
        # corrector
        mats = []
        for l, dS_, dZ_ in zip(lam, dSt[0], dZt[0]):
            prod = dS_ @ dZ_
            rc = -0.5 * (prod + np.swapaxes(prod, -1, -2))
            kk = l.shape[1]
            rc[:, np.arange(kk), np.arange(kk)] += sigma * mu - l ** 2
            mats.append(2.0 * rc / (l[:, :, None] + l[:, None, :]))
        rcl = sigma * mu - lam_l ** 2 - dSt[1] * dZt[1]
        dx, dy, dSt, dZt = newton((mats, rcl / lam_l if lam_l.size else rcl))
        ap = min(1.0, opts.step_fraction * _step_length(lam, lam_l, dSt))
        ad = min(1.0, opts.step_fraction * _step_length(lam, lam_l, dZt))

        x = x + ap * dx
        S = _add(S, sc.unscale_s(dSt), ap)
        Z = _add(Z, sc.unscale_z(dZt), ad)
        y = y + ad * dy
    return _result(status, cone, prog, x, y, Z, float("nan"), float("nan"), float("nan"),
                   float("nan"), float("nan"), it, message)


def _result(status, cone, prog, x, y, Z, pobj, dobj, gap, pres, dres, it, message=""):
    res = SolveResult(status, iterations=it, message=message)
    if status is not Status.OPTIMAL:
        return res
    Zs = [None] * len(prog.lmis)
    for g, M in zip(cone.groups, Z[0]):
        for j, pos in enumerate(g.members):
            Zs[pos] = symmetrize(M[j].copy())
    res.value = pobj
    res.x = x.copy()
    res.primal_obj, res.dual_obj, res.gap = pobj, dobj, gap
    res.tolerance = max(pres, dres, gap / max(1.0, abs(pobj)))
    res.y_eq, res.z_ineq, res.Z = y.copy(), Z[1].copy(), Zs
    return res
