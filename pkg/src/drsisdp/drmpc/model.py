"""Data model for distributionally robust MPC with multiplicative noise.

Dynamics: x+ = A x + B u + sum_j (C_j x + D_j u) w^j with zero-mean,
uncorrelated noise channels of variance sigma_j.  Inputs follow the affine
policy u_t = ubar_t + K_t (x_t - mu_t).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..sdp_core import Status, as_sym, is_psd, min_eig

EPS_STRICT = 1e-8


def _mat(M, shape, name):
    a = np.array(M, dtype=float, ndmin=2)
    if a.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray      # (q, d, d)
    D: np.ndarray      # (q, d, m)

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        d = A.shape[0]
        A = _mat(A, (d, d), "A")
        B = np.array(self.B, dtype=float, ndmin=2)
        if B.shape[0] != d:
            raise ValueError(f"B: expected {d} rows, got shape {B.shape}")
        m = B.shape[1]
        C = np.array(self.C, dtype=float)
        if C.ndim == 2:
            C = C[None]
        D = np.array(self.D, dtype=float)
        if D.ndim == 2:
            D = D[None]
        q = C.shape[0]
        if q < 1:
            raise ValueError("at least one noise channel is required")
        if C.shape != (q, d, d):
            raise ValueError(f"C: expected shape {(q, d, d)}, got {C.shape}")
        if D.shape != (q, d, m):
            raise ValueError(f"D: expected shape {(q, d, m)}, got {D.shape}")
        for k, v in dict(A=A, B=B, C=C, D=D).items():
            object.__setattr__(self, k, v)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    N: int

    def __post_init__(self):
        Q, R, S = as_sym(self.Q, "Q"), as_sym(self.R, "R"), as_sym(self.S, "S")
        if int(self.N) < 1:
            raise ValueError("horizon N must be >= 1")
        if not is_psd(Q, 1e-12):
            raise ValueError("Q must be positive semidefinite")
        if not is_psd(S, 1e-12):
            raise ValueError("S must be positive semidefinite")
        if min_eig(R) <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "N", int(self.N))

    @property
    def M(self):
        """Stage weight on the state-input second moment, blkdiag(Q, R)."""
        d, m = self.Q.shape[0], self.R.shape[0]
        M = np.zeros((d + m, d + m))
        M[:d, :d] = self.Q
        M[d:, d:] = self.R
        return M


@dataclass(frozen=True, eq=False)
class QuadRow:
    """E[z'Hz + f'z] <= beta for z the state (or state-input) vector."""

    H: np.ndarray
    f: np.ndarray
    beta: float

    def __post_init__(self):
        H = as_sym(self.H, "constraint H")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape != (H.shape[0],):
            raise ValueError(f"constraint f: expected length {H.shape[0]}, got {f.shape}")
        if not is_psd(H, 1e-12):
            raise ValueError("constraint H must be positive semidefinite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "beta", float(self.beta))

    def lhs(self, z):
        z = np.asarray(z, dtype=float)
        return float(z @ self.H @ z + self.f @ z)


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    state_action: tuple = ()
    state: tuple = ()
    S_f: np.ndarray | None = None
    alpha: float = np.inf
    # state-action rows bind for t = state_action_from .. N-1
    state_action_from: int = 1

    def __post_init__(self):
        object.__setattr__(self, "state_action", tuple(self.state_action))
        object.__setattr__(self, "state", tuple(self.state))
        if self.S_f is not None:
            S_f = as_sym(self.S_f, "S_f")
            if not is_psd(S_f, 1e-12):
                raise ValueError("S_f must be positive semidefinite")
            object.__setattr__(self, "S_f", S_f)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """Diagonal covariances eps_j <= sigma_j <= gamma * sigma_hat_j."""

    sigma_hat: np.ndarray
    gamma: float = 1.2
    floor_rel: float = 1e-6

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_hat, dtype=float))
        if s.ndim == 2:
            if np.any(s != np.diag(np.diag(s))):
                raise ValueError("empirical covariance must be diagonal")
            s = np.diag(s).copy()
        if np.any(s <= 0):
            raise ValueError(f"empirical variances must be positive, got {s}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.floor_rel < 1:
            raise ValueError("floor_rel must lie in (0, 1)")
        object.__setattr__(self, "sigma_hat", s)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def q(self):
        return len(self.sigma_hat)

    @property
    def upper(self):
        return self.gamma * self.sigma_hat

    @property
    def floor(self):
        return self.floor_rel * self.upper

    @property
    def corner(self):
        return self.upper.copy()

    def contains(self, sigma, tol=1e-12):
        sigma = np.asarray(sigma, dtype=float)
        return bool(sigma.shape == (self.q,) and np.all(sigma >= self.floor * (1 - tol))
                    and np.all(sigma <= self.upper * (1 + tol)))

    def sample(self, rng):
        return rng.uniform(self.floor, self.upper)


@dataclass(frozen=True, eq=False)
class DrmpcSpec:
    model: SystemModel
    cost: CostSpec
    constraints: ConstraintSpec
    ambiguity: AmbiguitySet

    def __post_init__(self):
        d, m, q = self.model.d, self.model.m, self.model.q
        if self.cost.Q.shape != (d, d) or self.cost.S.shape != (d, d):
            raise ValueError(f"Q and S must be {d}x{d}")
        if self.cost.R.shape != (m, m):
            raise ValueError(f"R must be {m}x{m}")
        for row in self.constraints.state_action:
            if row.H.shape != (d + m, d + m):
                raise ValueError(f"state-action constraint H must be {d + m}x{d + m}")
        for row in self.constraints.state:
            if row.H.shape != (d, d):
                raise ValueError(f"state constraint H must be {d}x{d}")
        if self.constraints.S_f is not None and self.constraints.S_f.shape != (d, d):
            raise ValueError(f"S_f must be {d}x{d}")
        if self.ambiguity.q != q:
            raise ValueError(f"ambiguity set has {self.ambiguity.q} channels, model has {q}")

    @property
    def N(self):
        return self.cost.N

    def eta_dim(self) -> int:
        """Per-stage decision dimension of (ubar, mu, P, Sigma, U)."""
        d, m = self.model.d, self.model.m
        return m + d + (d + m) * (d + m + 1) // 2 + d * (d + 1) // 2 + m * d

    def default_tuple_length(self) -> int:
        return 1 + self.N * self.eta_dim()


@dataclass
class StageVariables:
    u_bar: np.ndarray      # (N, m)
    mu: np.ndarray         # (N+1, d)
    Sigma: np.ndarray      # (N+1, d, d)
    U: np.ndarray          # (N, m, d)
    P: np.ndarray          # (N, d+m, d+m)
    P_N: np.ndarray        # (d, d)
    r0: float


@dataclass
class PolicyParams:
    status: Status
    value: float = float("nan")
    stages: StageVariables | None = None
    K: np.ndarray | None = None          # (N, m, d); K[0] is unused
    iterations: int = 0
    history: list = field(default_factory=list)
    samples: np.ndarray | None = None    # best covariance tuple, (L, q)
    n_infeasible: int = 0


def mean_propagate(model: SystemModel, mu, u_bar):
    return model.A @ np.asarray(mu, dtype=float) + model.B @ np.asarray(u_bar, dtype=float)


def covariance_propagate(model: SystemModel, Sigma, K, u_bar, mu, sigma_w):
    """Exact one-step covariance recursion under the affine policy."""
    Sigma = np.asarray(Sigma, dtype=float)
    K = np.asarray(K, dtype=float)
    mu = np.asarray(mu, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    sigma_w = np.atleast_1d(np.asarray(sigma_w, dtype=float))
    if sigma_w.ndim == 2:
        sigma_w = np.diag(sigma_w)
    if np.linalg.cond(Sigma) > 1e12 or min_eig(Sigma) <= 0:
        raise ValueError("Sigma_t must be positive definite with condition number <= 1e12")
    Acl = model.A + model.B @ K
    out = Acl @ Sigma @ Acl.T
    for j in range(model.q):
        Cbar = (model.C[j] + model.D[j] @ K) @ Sigma
        Dbar = model.C[j] @ mu + model.D[j] @ u_bar
        out = out + sigma_w[j] * (Cbar @ np.linalg.solve(Sigma, Cbar.T) + np.outer(Dbar, Dbar))
    return 0.5 * (out + out.T)


def recover_gains(Sigma, U, t: int | None = None):
    """K = U Sigma^-1."""
    Sigma = np.asarray(Sigma, dtype=float)
    U = np.asarray(U, dtype=float)
    where = "" if t is None else f" at t={t}"
    if min_eig(Sigma) <= 0 or np.linalg.cond(Sigma) > 1e12:
        raise ValueError(f"Sigma{where} is singular or ill-conditioned (cond > 1e12)")
    return np.linalg.solve(Sigma, U.T).T


def empirical_covariance(samples) -> np.ndarray:
    """Diagonal of the zero-mean second-moment average, as a q x q matrix."""
    xi = np.asarray(samples, dtype=float)
    if xi.size == 0:
        raise ValueError("at least one noise sample is required")
    if xi.ndim == 1:
        xi = xi[:, None]
    return np.diag(np.mean(xi * xi, axis=0))
