"""Experiment configuration: TOML files mapped onto frozen dataclasses.

Matrices are stored as nested tuples so configs compare by value and survive
a write/load round trip unchanged.  Every field except the system matrices
(and, in ``sisdp`` mode, the problem data) has a default.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .drmpc import (AmbiguitySet, ConstraintSpec, CostSpec, DrmpcSpec, QuadRow, SystemModel,
                    empirical_covariance)
from .sdp_core import SolverOptions
from .sisdp import FiniteList, MatrixBox, Segment, SisdpProblem, StoppingConfig

MODES = ("sisdp", "drmpc-open-loop", "drmpc-closed-loop")
BUNDLED_DIR = Path(__file__).resolve().parent / "configs"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _tup(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(a)
    return tuple(_tup(r) for r in a)


def _arr(value, name, ndim=None, shape=None):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a numeric array ({exc})") from None
    if ndim is not None and a.ndim != ndim:
        raise ConfigError(f"{name}: expected a {ndim}-d array, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise ConfigError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name}: entries must be finite")
    return a


@dataclass(frozen=True)
class SystemConfig:
    A: tuple
    B: tuple
    C: tuple          # (q, d, d)
    D: tuple          # (q, d, m)


@dataclass(frozen=True)
class RowConfig:
    H: tuple
    f: tuple
    beta: float


@dataclass(frozen=True)
class CostConfig:
    Q: tuple
    R: tuple
    S: tuple
    N: int = 5


@dataclass(frozen=True)
class ConstraintsConfig:
    state: tuple = ()
    state_action: tuple = ()
    S_f: tuple | None = None
    alpha: float = float("inf")
    state_action_from: int = 1


@dataclass(frozen=True)
class AmbiguityConfig:
    gamma: float = 1.2
    sigma_hat: tuple | None = None
    noise_samples: str | None = None      # absolute path to a CSV of samples, one column per channel
    floor_rel: float = 1e-6


@dataclass(frozen=True)
class AlgorithmConfig:
    max_iters: int = 200
    patience: int = 50
    delta_improve: float = 1e-6
    tuple_length: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class SolverConfig:
    eps_gap: float = 1e-7
    eps_feas: float = 1e-7
    max_ipm_iters: int = 200


@dataclass(frozen=True)
class SimConfig:
    T: int = 30
    n_traj: int = 40
    noise_variance: tuple = (1.0,)


@dataclass(frozen=True)
class SisdpConfig:
    C: tuple
    b: float
    index_set: str                  # "list" | "box" | "segment"
    members: tuple = ()
    lower: tuple | None = None
    upper: tuple | None = None
    A0: tuple | None = None
    A1: tuple | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    x0: tuple | None = None
    system: SystemConfig | None = None
    cost: CostConfig | None = None
    constraints: ConstraintsConfig = field(default_factory=ConstraintsConfig)
    ambiguity: AmbiguityConfig = field(default_factory=AmbiguityConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sisdp: SisdpConfig | None = None
    output_dir: str = "out"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Replace top-level or ``section.field`` values, e.g. ``{"algorithm.seed": 3}``."""
        cfg = self
        for key, val in kw.items():
            if "." in key:
                sec, name = key.split(".", 1)
                cfg = dataclasses.replace(cfg, **{sec: dataclasses.replace(getattr(cfg, sec), **{name: val})})
            else:
                cfg = dataclasses.replace(cfg, **{key: val})
        return cfg


# --- parsing ---------------------------------------------------------------

def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table")
    return sec


def _known(sec: dict, name: str, allowed):
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"{name}: unknown field(s) {', '.join(extra)}")


def _int(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name}: must be >= {lo}, got {v}")
    return int(v)


def _float(v, name, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    v = float(v)
    if positive and not v > 0:
        raise ConfigError(f"{name}: must be positive, got {v}")
    return v


def _require(sec, key, name):
    if key not in sec:
        raise ConfigError(f"missing required field {name}.{key}")
    return sec[key]


def _system(raw) -> SystemConfig:
    if "system" not in raw:
        raise ConfigError("missing required table 'system' (matrices A, B, C, D)")
    sec = _section(raw, "system")
    _known(sec, "system", ("A", "B", "C", "D"))
    A = _arr(_require(sec, "A", "system"), "system.A", ndim=2)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ConfigError(f"system.A: expected a square matrix, got shape {A.shape}")
    B = _arr(_require(sec, "B", "system"), "system.B", ndim=2)
    if B.shape[0] != d:
        raise ConfigError(f"system.B: expected shape ({d}, m), got {B.shape}")
    m = B.shape[1]
    C = _arr(_require(sec, "C", "system"), "system.C")
    D = _arr(_require(sec, "D", "system"), "system.D")
    C = C[None] if C.ndim == 2 else C
    D = D[None] if D.ndim == 2 else D
    if C.ndim != 3 or C.shape[1:] != (d, d):
        raise ConfigError(f"system.C: expected shape (q, {d}, {d}) or ({d}, {d}), got {C.shape}")
    q = C.shape[0]
    if D.shape != (q, d, m):
        raise ConfigError(f"system.D: expected shape ({q}, {d}, {m}) or ({d}, {m}), got {D.shape}")
    return SystemConfig(_tup(A), _tup(B), _tup(C), _tup(D))


def _row(entry, name, k) -> RowConfig:
    if not isinstance(entry, dict):
        raise ConfigError(f"{name}: expected a table with H, f, beta")
    _known(entry, name, ("H", "f", "beta"))
    H = _arr(entry.get("H", np.zeros((k, k))), f"{name}.H", shape=(k, k))
    f = _arr(entry.get("f", np.zeros(k)), f"{name}.f", shape=(k,))
    beta = _float(_require(entry, "beta", name), f"{name}.beta")
    return RowConfig(_tup(H), _tup(f), beta)


def _drmpc_sections(raw, base: Path):
    system = _system(raw)
    d, m = len(system.A), len(system.B[0])
    q = len(system.C)
    sec = _section(raw, "cost")
    _known(sec, "cost", ("Q", "R", "S", "N"))
    N = _int(sec.get("N", 5), "cost.N", lo=1)
    Q = _arr(sec.get("Q", np.eye(d)), "cost.Q", shape=(d, d))
    R = _arr(sec.get("R", np.eye(m)), "cost.R", shape=(m, m))

    csec = _section(raw, "constraints")
    _known(csec, "constraints", ("state", "state_action", "S_f", "alpha", "state_action_from"))
    state = tuple(_row(e, f"constraints.state[{i}]", d) for i, e in enumerate(csec.get("state", [])))
    sa = tuple(_row(e, f"constraints.state_action[{i}]", d + m)
               for i, e in enumerate(csec.get("state_action", [])))
    S_f = csec.get("S_f")
    if S_f is not None:
        S_f = _tup(_arr(S_f, "constraints.S_f", shape=(d, d)))
    alpha = _float(csec.get("alpha", float("inf")), "constraints.alpha")
    sa_from = _int(csec.get("state_action_from", 1), "constraints.state_action_from", lo=0)
    constraints = ConstraintsConfig(state, sa, S_f, alpha, sa_from)
    # terminal weight defaults to the terminal-constraint matrix, else to Q
    S = _arr(sec.get("S", S_f if S_f is not None else Q), "cost.S", shape=(d, d))
    cost = CostConfig(_tup(Q), _tup(R), _tup(S), N)

    asec = _section(raw, "ambiguity")
    _known(asec, "ambiguity", ("gamma", "sigma_hat", "noise_samples", "floor_rel"))
    gamma = _float(asec.get("gamma", 1.2), "ambiguity.gamma", positive=True)
    floor_rel = _float(asec.get("floor_rel", 1e-6), "ambiguity.floor_rel", positive=True)
    sigma_hat, samples = asec.get("sigma_hat"), asec.get("noise_samples")
    if (sigma_hat is None) == (samples is None):
        raise ConfigError("ambiguity: give exactly one of sigma_hat or noise_samples")
    if sigma_hat is not None:
        sigma_hat = _tup(_arr(np.atleast_1d(sigma_hat), "ambiguity.sigma_hat", shape=(q,)))
    else:
        if not isinstance(samples, str):
            raise ConfigError("ambiguity.noise_samples: expected a file path")
        path = Path(samples)
        if not path.is_absolute():
            path = (base / path)
        path = path.resolve()
        if not path.is_file():
            raise ConfigError(f"ambiguity.noise_samples: file not found: {path}")
        samples = str(path)
    ambiguity = AmbiguityConfig(gamma, sigma_hat, samples, floor_rel)

    ssec = _section(raw, "sim")
    _known(ssec, "sim", ("T", "n_traj", "noise_variance"))
    var = _arr(np.atleast_1d(ssec.get("noise_variance", [1.0] * q)), "sim.noise_variance", shape=(q,))
    if np.any(var < 0):
        raise ConfigError("sim.noise_variance: entries must be nonnegative")
    sim = SimConfig(_int(ssec.get("T", 30), "sim.T", lo=1), _int(ssec.get("n_traj", 40), "sim.n_traj", lo=1),
                    _tup(var))
    x0 = _tup(_arr(_require(raw, "x0", "top-level"), "x0", shape=(d,)))
    return dict(system=system, cost=cost, constraints=constraints, ambiguity=ambiguity, sim=sim, x0=x0)


def _sisdp_section(raw) -> SisdpConfig:
    if "sisdp" not in raw:
        raise ConfigError("missing required table 'sisdp' (C, b, index_set)")
    sec = _section(raw, "sisdp")
    _known(sec, "sisdp", ("C", "b", "index_set", "members", "lower", "upper", "A0", "A1"))
    C = _arr(_require(sec, "C", "sisdp"), "sisdp.C", ndim=2)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ConfigError(f"sisdp.C: expected a square matrix, got shape {C.shape}")
    b = _float(_require(sec, "b", "sisdp"), "sisdp.b")
    kind = _require(sec, "index_set", "sisdp")
    if kind not in ("list", "box", "segment"):
        raise ConfigError(f"sisdp.index_set: expected one of list, box, segment, got {kind!r}")
    out = dict(C=_tup(C), b=b, index_set=kind)
    if kind == "list":
        mem = _arr(_require(sec, "members", "sisdp"), "sisdp.members", ndim=3)
        if mem.shape[1:] != (n, n) or mem.shape[0] < 1:
            raise ConfigError(f"sisdp.members: expected shape (k, {n}, {n}) with k >= 1, got {mem.shape}")
        out["members"] = _tup(mem)
    elif kind == "box":
        out["lower"] = _tup(_arr(_require(sec, "lower", "sisdp"), "sisdp.lower", shape=(n, n)))
        out["upper"] = _tup(_arr(_require(sec, "upper", "sisdp"), "sisdp.upper", shape=(n, n)))
    else:
        out["A0"] = _tup(_arr(_require(sec, "A0", "sisdp"), "sisdp.A0", shape=(n, n)))
        out["A1"] = _tup(_arr(_require(sec, "A1", "sisdp"), "sisdp.A1", shape=(n, n)))
    return SisdpConfig(**out)


def config_from_dict(raw: dict, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    """Validate a parsed TOML document; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    _known(raw, "top-level", ("mode", "x0", "output_dir", "system", "cost", "constraints", "ambiguity",
                              "algorithm", "solver", "sim", "sisdp"))
    mode = raw.get("mode", "drmpc-closed-loop")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
    asec = _section(raw, "algorithm")
    _known(asec, "algorithm", ("max_iters", "patience", "delta_improve", "tuple_length", "seed"))
    tl = asec.get("tuple_length")
    algorithm = AlgorithmConfig(
        _int(asec.get("max_iters", 200), "algorithm.max_iters", lo=1),
        _int(asec.get("patience", 50), "algorithm.patience", lo=1),
        _float(asec.get("delta_improve", 1e-6), "algorithm.delta_improve"),
        None if tl is None else _int(tl, "algorithm.tuple_length", lo=1),
        _int(asec.get("seed", 0), "algorithm.seed", lo=0),
    )
    if algorithm.delta_improve < 0:
        raise ConfigError("algorithm.delta_improve: must be nonnegative")
    ssec = _section(raw, "solver")
    _known(ssec, "solver", ("eps_gap", "eps_feas", "max_ipm_iters"))
    solver = SolverConfig(_float(ssec.get("eps_gap", 1e-7), "solver.eps_gap", positive=True),
                          _float(ssec.get("eps_feas", 1e-7), "solver.eps_feas", positive=True),
                          _int(ssec.get("max_ipm_iters", 200), "solver.max_ipm_iters", lo=1))
    out_dir = raw.get("output_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir: expected a path string")
    kw = dict(mode=mode, algorithm=algorithm, solver=solver, output_dir=out_dir)
    if mode == "sisdp":
        kw["sisdp"] = _sisdp_section(raw)
    else:
        kw.update(_drmpc_sections(raw, base))
    return ExperimentConfig(**kw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from None
    return config_from_dict(raw, path.resolve().parent)


def bundled_config(name: str) -> Path:
    path = BUNDLED_DIR / (name if name.endswith(".toml") else name + ".toml")
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            out[f.name] = _plain(v)
        return out
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = _plain(cfg)
    for key in ("state", "state_action"):
        if key in d.get("constraints", {}) and not d["constraints"][key]:
            del d["constraints"][key]
    if cfg.sisdp is not None and not cfg.sisdp.members:
        d["sisdp"].pop("members", None)
    if cfg.mode == "sisdp":
        for key in ("constraints", "ambiguity", "sim"):
            d.pop(key, None)
    return d


def write_config(cfg: ExperimentConfig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(tomli_w.dumps(config_to_dict(cfg)))
    return path


# --- model construction ----------------------------------------------------

def read_noise_samples(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise ConfigError(f"ambiguity.noise_samples: no samples in {path}")
    return data


def estimated_sigma_hat(cfg: ExperimentConfig) -> np.ndarray:
    amb = cfg.ambiguity
    if amb.sigma_hat is not None:
        return np.array(amb.sigma_hat, dtype=float)
    samples = read_noise_samples(amb.noise_samples)
    q = len(cfg.system.C)
    if samples.shape[1] != q:
        raise ConfigError(f"ambiguity.noise_samples: expected {q} column(s), got {samples.shape[1]}")
    return np.diag(empirical_covariance(samples)).copy()


def build_drmpc_spec(cfg: ExperimentConfig) -> DrmpcSpec:
    s, c, k = cfg.system, cfg.cost, cfg.constraints
    try:
        model = SystemModel(np.array(s.A), np.array(s.B), np.array(s.C), np.array(s.D))
        cost = CostSpec(np.array(c.Q), np.array(c.R), np.array(c.S), c.N)
        cons = ConstraintSpec(
            state=tuple(QuadRow(np.array(r.H), np.array(r.f), r.beta) for r in k.state),
            state_action=tuple(QuadRow(np.array(r.H), np.array(r.f), r.beta) for r in k.state_action),
            S_f=None if k.S_f is None else np.array(k.S_f), alpha=k.alpha,
            state_action_from=k.state_action_from)
        amb = AmbiguitySet(estimated_sigma_hat(cfg), cfg.ambiguity.gamma, cfg.ambiguity.floor_rel)
        return DrmpcSpec(model, cost, cons, amb)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_sisdp_problem(cfg: ExperimentConfig) -> SisdpProblem:
    s = cfg.sisdp
    try:
        if s.index_set == "list":
            U = FiniteList(tuple(np.array(M) for M in s.members))
        elif s.index_set == "box":
            U = MatrixBox(np.array(s.lower), np.array(s.upper))
        else:
            U = Segment(np.array(s.A0), np.array(s.A1))
        return SisdpProblem(np.array(s.C), s.b, U)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def stopping(cfg: ExperimentConfig) -> StoppingConfig:
    a = cfg.algorithm
    return StoppingConfig(max_iters=a.max_iters, patience=a.patience, delta_improve=a.delta_improve,
                          tuple_length=a.tuple_length)


def solver_options(cfg: ExperimentConfig) -> SolverOptions:
    s = cfg.solver
    return SolverOptions(eps_gap=s.eps_gap, eps_feas=s.eps_feas, max_ipm_iters=s.max_ipm_iters)
