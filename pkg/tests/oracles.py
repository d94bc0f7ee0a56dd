"""Independent reference solvers used only by the tests.

None of these touch the package's conic assembly or interior-point code:
the SI-SDP oracle is a cutting-plane LP on HiGHS, the DRMPC oracle writes the
single-covariance program directly in cvxpy and solves it with Clarabel.
"""
from __future__ import annotations

import numpy as np
import scipy.optimize as so


def segment_grid_oracle(C, b, A0, A1, n_grid=1000, tol=1e-10, max_rounds=200):
    """min <C,X> s.t. <A,X> <= b on a grid of the segment [A0, A1], X PSD.

    The PSD cone is handled by eigenvector cuts v'Xv >= 0 added until the
    LP minimizer has no eigenvalue below -tol.  Returns (value, X).
    """
    C, A0, A1 = (np.asarray(M, dtype=float) for M in (C, A0, A1))
    n = C.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]

    def coef(M):
        return np.array([M[i, j] if i == j else 2 * M[i, j] for i, j in pairs])

    def mat(x):
        X = np.zeros((n, n))
        for k, (i, j) in enumerate(pairs):
            X[i, j] = X[j, i] = x[k]
        return X

    grid = [(1 - t) * A0 + t * A1 for t in np.linspace(0, 1, n_grid)]
    rows = [coef(A) for A in grid]
    rhs = [b] * len(grid)
    cuts = [np.eye(n)[k] for k in range(n)]
    for _ in range(max_rounds):
        A_ub = np.array(rows + [-coef(np.outer(v, v)) for v in cuts])
        b_ub = np.array(rhs + [0.0] * len(cuts))
        res = so.linprog(coef(C), A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * len(pairs), method="highs")
        if res.status != 0:
            raise RuntimeError(f"oracle LP failed: {res.message}")
        X = mat(res.x)
        w, V = np.linalg.eigh(X)
        if w[0] >= -tol:
            return float(res.fun), X
        cuts.extend(V[:, k] for k in range(n) if w[k] < -tol)
    raise RuntimeError("oracle cutting planes did not converge")


def corner_drmpc_oracle(A, B, C, D, Q, R, S, N, x0, sigma, state_rows=(), S_f=None, alpha=None,
                        state_action_rows=(), sa_from=1, eps=1e-8):
    """Single-covariance DRMPC program written out directly in cvxpy.

    C, D are lists of per-channel matrices; sigma the per-channel variances.
    Rows are (H, f, beta) triples.  Returns (value, dict of solution arrays).
    """
    import cvxpy as cp

    A, B, Q, R, S = (np.asarray(M, dtype=float) for M in (A, B, Q, R, S))
    C = [np.asarray(M, dtype=float) for M in C]
    D = [np.asarray(M, dtype=float) for M in D]
    d, m = B.shape
    q = len(C)
    x0 = np.asarray(x0, dtype=float)
    col = lambda e, k: cp.reshape(e, (k, 1), order="C")  # noqa: E731
    ub = [cp.Variable(m) for _ in range(N)]
    mu = [x0] + [cp.Variable(d) for _ in range(N)]
    Sg = [np.zeros((d, d))] + [cp.Variable((d, d), symmetric=True) for _ in range(N)]
    U = [np.zeros((m, d))] + [cp.Variable((m, d)) for _ in range(1, N)]
    P = [cp.Variable((d + m, d + m), symmetric=True) for _ in range(N)]
    PN = cp.Variable((d, d), symmetric=True)
    Z = np.zeros
    cons = []
    for t in range(N):
        cons.append(mu[t + 1] == A @ mu[t] + B @ ub[t])
        Dbar = [col(np.sqrt(sigma[j]) * (C[j] @ mu[t] + D[j] @ ub[t]), d) for j in range(q)]
        if t == 0:
            top = cp.hstack([Sg[1]] + Dbar)
            rest = [cp.hstack([Dbar[j].T] + [np.eye(q)[j:j + 1]]) for j in range(q)]
            cons.append(cp.vstack([top] + rest) >> 0)
            h = col(cp.hstack([mu[0], ub[0]]), d + m)
            cons.append(cp.bmat([[P[0], h], [h.T, np.ones((1, 1))]]) >> 0)
        else:
            L0 = A @ Sg[t] + B @ U[t]
            L1 = [np.sqrt(sigma[j]) * (C[j] @ Sg[t] + D[j] @ U[t]) for j in range(q)]
            k = 2 * d + q * (d + 1)
            rows = [[Sg[t + 1], L0] + L1 + Dbar]
            rows.append([L0.T, Sg[t]] + [Z((d, d))] * q + [Z((d, 1))] * q)
            for j in range(q):
                r = [L1[j].T, Z((d, d))] + [Sg[t] if i == j else Z((d, d)) for i in range(q)] + [Z((d, 1))] * q
                rows.append(r)
            for j in range(q):
                r = [Dbar[j].T, Z((1, d))] + [Z((1, d))] * q + [np.ones((1, 1)) if i == j else Z((1, 1))
                                                               for i in range(q)]
                rows.append(r)
            M = cp.bmat(rows)
            assert M.shape == (k, k)
            cons.append(M >> 0)
            G = cp.bmat([[Sg[t], U[t].T], [col(mu[t], d).T, col(ub[t], m).T]])
            Dg = cp.bmat([[Sg[t], Z((d, 1))], [Z((1, d)), np.ones((1, 1))]])
            cons.append(cp.bmat([[P[t], G.T], [G, Dg]]) >> 0)
        cons.append(Sg[t + 1] >> eps * np.eye(d))
    mN = col(mu[N], d)
    cons.append(cp.bmat([[PN - Sg[N], mN], [mN.T, np.ones((1, 1))]]) >> 0)
    for t in range(1, N + 1):
        Px = PN if t == N else P[t][:d, :d]
        for H, f, beta in state_rows:
            cons.append(cp.trace(np.asarray(H) @ Px) + np.asarray(f) @ mu[t] <= beta)
    for t in range(sa_from, N):
        z = cp.hstack([mu[t], ub[t]])
        for H, f, beta in state_action_rows:
            cons.append(cp.trace(np.asarray(H) @ P[t]) + np.asarray(f) @ z <= beta)
    if S_f is not None:
        cons.append(cp.trace(np.asarray(S_f) @ PN) <= alpha)
    Mw = np.zeros((d + m, d + m))
    Mw[:d, :d], Mw[d:, d:] = Q, R
    obj = sum(cp.trace(Mw @ P[t]) for t in range(N)) + cp.trace(S @ PN)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if prob.status != "optimal":
        raise RuntimeError(f"oracle solve ended with status {prob.status}")
    return float(prob.value), {"u_bar": np.array([u.value for u in ub]),
                               "mu": np.array([x0] + [v.value for v in mu[1:]])}


# ---------------------------------------------------------------- analytic SDPs


def _sym_var_lmi(n, F0=None, scale=1.0):
    """LMI F0 + scale * X >= 0 over the upper-triangle coordinates of X."""
    from drsisdp.sdp_core import LmiBlock, svec_basis

    E = svec_basis(n)
    return LmiBlock.from_terms(np.zeros((n, n)) if F0 is None else F0, {k: scale * E[k] for k in range(len(E))})


def _inner(C):
    from drsisdp.sdp_core import svec_basis

    return np.einsum("kij,ij->k", svec_basis(C.shape[0]), C)


def spec_examples():
    """(name, program, optimal value) for the three documented solver examples."""
    from drsisdp.sdp_core import ConicProgram, LmiBlock

    out = [("min z s.t. [z] >= 0", ConicProgram(c=[1.0], lmis=[LmiBlock.from_terms([[0.0]], {0: np.eye(1)})]), 0.0)]
    out.append(("min tr X s.t. X - I >= 0",
                ConicProgram(c=_inner(np.eye(2)), lmis=[_sym_var_lmi(2, -np.eye(2))]), 2.0))
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    out.append(("min <C,X> s.t. tr X = 1, X >= 0",
                ConicProgram(c=_inner(C), lmis=[_sym_var_lmi(2)], A_eq=_inner(np.eye(2))[None], b_eq=[1.0]), 1.0))
    return out


def random_analytic_programs(rng, count=20):
    """Order-2/3 SDPs whose optima follow from eigenvalue identities.

    Cycles through three families:
      min <C,X> s.t. tr X = 1, X >= 0       -> lambda_min(C)
      min tr X  s.t. X >= M                  -> tr M
      min t     s.t. t I - C >= 0            -> lambda_max(C)
    """
    from drsisdp.sdp_core import ConicProgram, LmiBlock

    out = []
    for k in range(count):
        n = 2 + k % 2
        G = rng.standard_normal((n, n))
        C = 0.5 * (G + G.T)
        fam = k % 3
        if fam == 0:
            prog = ConicProgram(c=_inner(C), lmis=[_sym_var_lmi(n)], A_eq=_inner(np.eye(n))[None], b_eq=[1.0])
            val = float(np.linalg.eigvalsh(C)[0])
        elif fam == 1:
            prog = ConicProgram(c=_inner(np.eye(n)), lmis=[_sym_var_lmi(n, -C)])
            val = float(np.trace(C))
        else:
            prog = ConicProgram(c=[1.0], lmis=[LmiBlock.from_terms(-C, {0: np.eye(n)})])
            val = float(np.linalg.eigvalsh(C)[-1])
        out.append((f"family {fam}, order {n}", prog, val))
    return out


# ---------------------------------------------------------------- DRMPC solution checks


def second_moment(Sigma, U, mu, u_bar):
    """E[h h'] of h = (x, u) under u = u_bar + K (x - mu) with U = K Sigma."""
    Uu = U @ np.linalg.solve(Sigma, U.T)
    return np.block([[Sigma + np.outer(mu, mu), U.T + np.outer(mu, u_bar)],
                     [U + np.outer(u_bar, mu), Uu + np.outer(u_bar, u_bar)]])


def recursion_margins(spec, stages, K, samples):
    """Smallest eigenvalues of Sigma_{t+1} - recursion(Sigma_t) and P_t - second moment, over t and samples.

    t = 0 uses Sigma_0 = 0 directly, so that only the D-bar term survives.
    """
    from drsisdp.drmpc import covariance_propagate

    model, N = spec.model, spec.N
    st = stages
    cov = np.inf
    for sigma in np.atleast_2d(samples):
        for t in range(N):
            if t == 0:
                nxt = sum(sigma[j] * np.outer(model.C[j] @ st.mu[0] + model.D[j] @ st.u_bar[0],
                                              model.C[j] @ st.mu[0] + model.D[j] @ st.u_bar[0])
                          for j in range(model.q))
            else:
                nxt = covariance_propagate(model, st.Sigma[t], K[t], st.u_bar[t], st.mu[t], sigma)
            cov = min(cov, float(np.linalg.eigvalsh(st.Sigma[t + 1] - nxt)[0]))
    mom = np.inf
    for t in range(N):
        if t == 0:
            h = np.concatenate([st.mu[0], st.u_bar[0]])
            target = np.outer(h, h)
        else:
            target = second_moment(st.Sigma[t], st.U[t], st.mu[t], st.u_bar[t])
        mom = min(mom, float(np.linalg.eigvalsh(st.P[t] - target)[0]))
    term = st.P_N - st.Sigma[N] - np.outer(st.mu[N], st.mu[N])
    mom = min(mom, float(np.linalg.eigvalsh(term)[0]))
    return cov, mom


def two_state_corner_oracle(spec, x_bar):
    """corner_drmpc_oracle on a DrmpcSpec at its corner covariance."""
    m, c, cons = spec.model, spec.cost, spec.constraints
    return corner_drmpc_oracle(m.A, m.B, list(m.C), list(m.D), c.Q, c.R, c.S, spec.N, x_bar,
                               spec.ambiguity.corner,
                               state_rows=[(r.H, r.f, r.beta) for r in cons.state],
                               state_action_rows=[(r.H, r.f, r.beta) for r in cons.state_action],
                               sa_from=cons.state_action_from, S_f=cons.S_f, alpha=cons.alpha)
