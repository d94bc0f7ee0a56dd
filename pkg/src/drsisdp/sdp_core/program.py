"""Finite conic programs: linear objective, LMI blocks, scalar rows."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import symmetrize


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LmiBlock:
    """The constraint F0 + sum_r x[index[r]] * coeffs[r] >= 0 (PSD).

    ``index`` lists the decision variables that touch the block (sorted,
    unique); ``coeffs[r]`` is the coefficient matrix of ``x[index[r]]``.
    """

    F0: np.ndarray
    index: np.ndarray
    coeffs: np.ndarray
    name: str = ""

    def __post_init__(self):
        F0 = np.asarray(self.F0, dtype=float)
        k = F0.shape[0]
        if F0.shape != (k, k) or k < 1:
            raise ValueError(f"LMI {self.name!r}: F0 must be square, got {F0.shape}")
        index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(len(index), k, k)
        if len(index) and (np.any(np.diff(index) <= 0) or index[0] < 0):
            raise ValueError(f"LMI {self.name!r}: index must be sorted, unique and nonnegative")
        stack = np.concatenate([F0[None], coeffs])
        asym = np.abs(stack - np.swapaxes(stack, 1, 2)).max()
        if asym > 1e-12 * max(1.0, np.abs(stack).max()):
            raise ValueError(f"LMI {self.name!r}: coefficient matrices must be symmetric")
        object.__setattr__(self, "F0", _frozen(symmetrize(F0)))
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "coeffs", _frozen(symmetrize(coeffs)))
        index.setflags(write=False)

    @property
    def order(self) -> int:
        return self.F0.shape[0]

    @classmethod
    def from_terms(cls, F0, terms: dict[int, np.ndarray], name: str = "") -> "LmiBlock":
        """Build from a ``{variable index: coefficient matrix}`` mapping, dropping zero terms."""
        F0 = np.asarray(F0, dtype=float)
        keep = sorted(i for i, M in terms.items() if np.any(M != 0))
        coeffs = np.array([terms[i] for i in keep], dtype=float).reshape(len(keep), *F0.shape)
        return cls(F0, np.array(keep, dtype=np.int64), coeffs, name)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.F0 + np.tensordot(x[self.index], self.coeffs, axes=1)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """minimize c'x  s.t.  LMI blocks >= 0,  A_ub x <= b_ub,  A_eq x = b_eq."""

    c: np.ndarray
    lmis: tuple[LmiBlock, ...] = ()
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        p = len(c)
        if p < 1:
            raise ValueError("program needs at least one decision variable")
        A_ub, b_ub = _rows(self.A_ub, self.b_ub, p, "inequality")
        A_eq, b_eq = _rows(self.A_eq, self.b_eq, p, "equality")
        lmis = tuple(self.lmis)
        for blk in lmis:
            if not isinstance(blk, LmiBlock):
                raise TypeError("lmis must contain LmiBlock instances")
            if len(blk.index) and blk.index[-1] >= p:
                raise ValueError(f"LMI {blk.name!r} references variable {blk.index[-1]} >= p={p}")
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "lmis", lmis)
        object.__setattr__(self, "A_ub", _frozen(A_ub))
        object.__setattr__(self, "b_ub", _frozen(b_ub))
        object.__setattr__(self, "A_eq", _frozen(A_eq))
        object.__setattr__(self, "b_eq", _frozen(b_eq))

    @property
    def p(self) -> int:
        return len(self.c)

    @property
    def n_ineq(self) -> int:
        return self.A_ub.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    def max_violation(self, x: np.ndarray) -> float:
        """Largest violation over all constraints at ``x`` (0 if feasible)."""
        x = np.asarray(x, dtype=float)
        viol = 0.0
        for blk in self.lmis:
            viol = max(viol, -float(np.linalg.eigvalsh(blk.evaluate(x))[0]))
        if self.n_ineq:
            viol = max(viol, float(np.max(self.A_ub @ x - self.b_ub)))
        if self.n_eq:
            viol = max(viol, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        return max(viol, 0.0)

    def listing(self) -> str:
        """Human-readable dump, one constraint per line."""
        vn = self.names.get("variables")

        def var(i):
            return vn[i] if vn is not None else f"x{i}"

        def linear(a):
            terms = [f"{a[i]:+.6g}*{var(i)}" for i in np.flatnonzero(a)]
            return " ".join(terms) if terms else "0"

        lines = [f"# variables: {self.p}, lmis: {len(self.lmis)}, "
                 f"inequalities: {self.n_ineq}, equalities: {self.n_eq}"]
        lines.append(f"minimize {linear(self.c)}")
        row_names = self.names.get("ineq", [])
        for r in range(self.n_ineq):
            label = row_names[r] if r < len(row_names) else f"ineq{r}"
            lines.append(f"ineq {label}: {linear(self.A_ub[r])} <= {self.b_ub[r]:.9g}")
        row_names = self.names.get("eq", [])
        for r in range(self.n_eq):
            label = row_names[r] if r < len(row_names) else f"eq{r}"
            lines.append(f"eq {label}: {linear(self.A_eq[r])} == {self.b_eq[r]:.9g}")
        for b, blk in enumerate(self.lmis):
            label = blk.name or f"lmi{b}"
            F0 = np.array2string(blk.F0, precision=6, separator=",", max_line_width=10**6)
            used = ", ".join(var(i) for i in blk.index)
            lines.append(f"lmi {label}: order {blk.order}, vars [{used}], F0={F0.replace(chr(10), '')}")
        return "\n".join(lines) + "\n"


def _rows(A, b, p, what):
    if A is None or (np.size(A) == 0 and (b is None or np.size(b) == 0)):
        return np.zeros((0, p)), np.zeros(0)
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (len(b), p):
        raise ValueError(f"{what} rows: expected coefficient shape {(len(b), p)}, got {A.shape}")
    return A, b
