import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import tomli_w
from hypothesis import given
from hypothesis import strategies as st

from drsisdp import cli
from drsisdp.config import (ConfigError, bundled_config, build_drmpc_spec, config_from_dict, estimated_sigma_hat,
                            load_config, write_config)

from conftest import A4, B4, C4, D4, Q4, R4, SF4


def two_state_raw(**changes):
    raw = {
        "mode": "drmpc-closed-loop", "x0": [0.1, 1.2],
        "system": {"A": A4.tolist(), "B": B4.tolist(), "C": C4.tolist(), "D": D4.tolist()},
        "cost": {"Q": Q4.tolist(), "R": R4.tolist(), "N": 3},
        "constraints": {"S_f": SF4.tolist(), "alpha": 45.0, "state": [{"f": [-2.0, 1.0], "beta": 2.3}]},
        "ambiguity": {"gamma": 1.2, "sigma_hat": [1.04]},
        "algorithm": {"max_iters": 3, "patience": 1, "seed": 0},
        "sim": {"T": 2, "n_traj": 2, "noise_variance": [1.0]},
    }
    for key, val in changes.items():
        sec, _, name = key.partition(".")
        if name:
            if val is None:
                raw[sec].pop(name)
            else:
                raw[sec][name] = val
        else:
            raw[sec] = val
    return raw


def write_raw(path, raw):
    path.write_text(tomli_w.dumps(raw))
    return path


def read_summary(out):
    return json.loads((out / cli.SUMMARY_FILE).read_text())


# ---------------------------------------------------------------- config


def test_bundled_experiment_config_is_the_two_state_system():
    cfg = load_config(bundled_config("experiment_sec4"))
    spec = build_drmpc_spec(cfg)
    assert np.array_equal(spec.model.A, A4) and np.array_equal(spec.model.B, B4)
    assert np.array_equal(spec.model.C[0], C4) and np.array_equal(spec.model.D[0], D4)
    assert np.array_equal(spec.cost.Q, Q4) and np.array_equal(spec.cost.R, R4)
    assert np.array_equal(spec.cost.S, SF4) and np.array_equal(spec.constraints.S_f, SF4)
    assert spec.constraints.alpha == 45.0
    (row,) = spec.constraints.state
    assert np.array_equal(row.f, [-2.0, 1.0]) and row.beta == 2.3 and not row.H.any()
    assert cfg.x0 == (0.1, 1.2) and cfg.sim.n_traj == 40 and cfg.sim.T == 30
    assert spec.N == 5 and spec.ambiguity.gamma == 1.2
    samples = np.loadtxt(cfg.ambiguity.noise_samples, delimiter=",", skiprows=1)
    assert samples.shape == (30,)
    assert 0.7 <= estimated_sigma_hat(cfg)[0] <= 1.4


def test_all_bundled_configs_load():
    for name in ("experiment_sec4", "open_loop_two_state", "segment_toy"):
        load_config(bundled_config(name))
    with pytest.raises(ConfigError, match="no bundled config"):
        bundled_config("nope")


def test_missing_B_is_named():
    raw = two_state_raw()
    raw["system"].pop("B")
    with pytest.raises(ConfigError, match=r"\bB\b"):
        config_from_dict(raw)


def test_zero_horizon_is_rejected():
    with pytest.raises(ConfigError, match="cost.N"):
        config_from_dict(two_state_raw(**{"cost.N": 0}))


@pytest.mark.parametrize("change,match", [
    ({"system.B": [[1.0, 0.0]]}, r"system.B: expected shape \(2, m\)"),
    ({"system.D": [[1.0], [0.0]]}, "system.D"),
    ({"x0": [1.0]}, r"x0: expected shape \(2,\)"),
    ({"cost.Q": [[1.0]]}, "cost.Q"),
    ({"ambiguity.sigma_hat": None}, "exactly one of"),
    ({"ambiguity.noise_samples": "missing.csv"}, "exactly one of"),
    ({"ambiguity.gamma": -1.0}, "gamma"),
    ({"algorithm.max_iters": 0}, "max_iters"),
    ({"algorithm.seed": -1}, "seed"),
    ({"sim.noise_variance": [-1.0]}, "nonnegative"),
    ({"mode": "other"}, "mode"),
    ({"cost.R": [[1.0, 0.0], [0.0, 0.0]]}, "R must be positive definite"),
])
def test_validation_errors_name_the_field(change, match):
    with pytest.raises(ConfigError, match=match):
        cfg = config_from_dict(two_state_raw(**change))
        build_drmpc_spec(cfg)


def test_unknown_fields_are_rejected():
    raw = two_state_raw()
    raw["cost"]["horizon"] = 5
    with pytest.raises(ConfigError, match="unknown field.*horizon"):
        config_from_dict(raw)


def test_noise_sample_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "w.csv").write_text("w1\n1.0\n-1.0\n")
    raw = two_state_raw(**{"ambiguity.sigma_hat": None, "ambiguity.noise_samples": "w.csv"})
    cfg = load_config(write_raw(tmp_path / "c.toml", raw))
    assert cfg.ambiguity.noise_samples == str((tmp_path / "w.csv").resolve())
    assert estimated_sigma_hat(cfg) == pytest.approx([1.0])
    raw["ambiguity"]["noise_samples"] = "absent.csv"
    with pytest.raises(ConfigError, match="file not found"):
        load_config(write_raw(tmp_path / "c.toml", raw))


def test_defaults_are_filled():
    raw = two_state_raw()
    for sec in ("algorithm", "sim"):
        raw.pop(sec)
    raw["cost"] = {}
    raw["constraints"] = {}
    cfg = config_from_dict(raw)
    assert cfg.cost.N == 5 and cfg.cost.Q == ((1.0, 0.0), (0.0, 1.0)) and cfg.cost.S == cfg.cost.Q
    assert (cfg.algorithm.max_iters, cfg.algorithm.patience, cfg.algorithm.seed) == (200, 50, 0)
    assert (cfg.sim.T, cfg.sim.n_traj, cfg.sim.noise_variance) == (30, 40, (1.0,))
    assert (cfg.solver.eps_gap, cfg.solver.eps_feas, cfg.solver.max_ipm_iters) == (1e-7, 1e-7, 200)


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def drmpc_raw(draw):
    d, m, q = draw(st.integers(1, 3)), draw(st.integers(1, 2)), draw(st.integers(1, 2))
    mat = lambda r, c: draw(st.lists(st.lists(finite, min_size=c, max_size=c), min_size=r, max_size=r))  # noqa: E731
    raw = {
        "mode": draw(st.sampled_from(["drmpc-open-loop", "drmpc-closed-loop"])),
        "x0": draw(st.lists(finite, min_size=d, max_size=d)),
        "output_dir": draw(st.text("abc/_", min_size=1, max_size=8)),
        "system": {"A": mat(d, d), "B": mat(d, m), "C": [mat(d, d) for _ in range(q)],
                   "D": [mat(d, m) for _ in range(q)]},
        "cost": {"N": draw(st.integers(1, 9))},
        "constraints": {"alpha": draw(st.floats(0.1, 1e3)),
                        "state": [{"f": draw(st.lists(finite, min_size=d, max_size=d)), "beta": draw(finite)}
                                  for _ in range(draw(st.integers(0, 2)))]},
        "ambiguity": {"gamma": draw(st.floats(0.1, 3.0)),
                      "sigma_hat": draw(st.lists(st.floats(0.01, 5.0), min_size=q, max_size=q))},
        "algorithm": {"max_iters": draw(st.integers(1, 1000)), "seed": draw(st.integers(0, 2 ** 63 - 1)),
                      "delta_improve": draw(st.floats(0.0, 1.0))},
        "sim": {"T": draw(st.integers(1, 50)), "noise_variance": draw(st.lists(st.floats(0, 2), min_size=q,
                                                                                max_size=q))},
    }
    if draw(st.booleans()):
        raw["algorithm"]["tuple_length"] = draw(st.integers(1, 300))
    return raw


@given(drmpc_raw())
def test_config_round_trip(tmp_path_factory, raw):
    cfg = config_from_dict(raw)
    path = write_config(cfg, tmp_path_factory.mktemp("rt") / "c.toml")
    assert load_config(path) == cfg


def test_config_round_trip_for_bundled_configs(tmp_path):
    for name in ("experiment_sec4", "open_loop_two_state", "segment_toy"):
        cfg = load_config(bundled_config(name))
        assert load_config(write_config(cfg, tmp_path / f"{name}.toml")) == cfg


# ---------------------------------------------------------------- CLI


def test_sisdp_mode_on_segment_toy(tmp_path):
    code = cli.main(["--config", str(bundled_config("segment_toy")), "--out", str(tmp_path), "--max-iters", "60"])
    assert code == cli.EXIT_OK
    s = read_summary(tmp_path)
    assert tuple(s) == cli.SUMMARY_KEYS
    assert s["status"] == "ok" and s["mode"] == "sisdp" and s["truncated"] is False
    h = s["result"]["gbar_history"]
    assert len(h) == 60 and all(b >= a for a, b in zip(h, h[1:]))
    assert s["result"]["value"] == h[-1] and abs(h[-1] + 0.5) < 0.05
    assert s["solver_tolerances"] == {"eps_gap": 1e-7, "eps_feas": 1e-7, "max_ipm_iters": 200}
    assert not (tmp_path / cli.TRAJECTORY_FILE).exists()


def test_closed_loop_outputs_and_determinism(tmp_path):
    cfg_path = write_raw(tmp_path / "c.toml", two_state_raw())
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["--config", str(cfg_path), "--out", str(out)]) == cli.EXIT_OK
    for name in (cli.TRAJECTORY_FILE, cli.PHASE_FILE):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    with open(outs[0] / cli.TRAJECTORY_FILE) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["traj_id", "t", "x1", "x2", "u1", "u2"]
    assert len(rows) == 1 + 2 * 3
    assert rows[1][:4] == ["0", "0", "0.10000000000000001", "1.2"]
    assert rows[3][4:] == ["", ""]
    with open(outs[0] / cli.PHASE_FILE) as fh:
        assert next(csv.reader(fh)) == ["traj_id", "t", "x1", "x2"]
    s = read_summary(outs[0])
    assert tuple(s) == cli.SUMMARY_KEYS and s["sigma_hat"] == [1.04]
    res = s["result"]
    assert res["n_traj"] == 2 and len(res["trajectories"]) == 2
    tr = res["trajectories"][0]
    for key in ("values", "iterations", "wall_times", "terminal_trace", "gbar_history"):
        assert len(tr[key]) == 2
    (vs,) = res["violation_stats"]
    assert vs["kind"] == "state" and vs["bound"] == 2.3 and vs["t"] == [0, 1, 2]


def test_seed_override_changes_noise(tmp_path):
    cfg_path = write_raw(tmp_path / "c.toml", two_state_raw(**{"sim.T": 1, "sim.n_traj": 1}))
    cli.main(["--config", str(cfg_path), "--out", str(tmp_path / "a")])
    cli.main(["--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "17"])
    assert read_summary(tmp_path / "b")["seed"] == 17
    a = (tmp_path / "a" / cli.TRAJECTORY_FILE).read_text()
    b = (tmp_path / "b" / cli.TRAJECTORY_FILE).read_text()
    assert a != b


def test_open_loop_with_dump_program(tmp_path):
    raw = two_state_raw(mode="drmpc-open-loop", **{"cost.N": 5})
    cfg_path = write_raw(tmp_path / "c.toml", raw)
    assert cli.main(["--config", str(cfg_path), "--out", str(tmp_path), "--dump-program", "--max-iters", "1"]) == 0
    text = (tmp_path / cli.PROGRAM_FILE).read_text()
    assert text.startswith("# variables: 105")
    assert "lmi cov[t=4][sample 0]" in text and "ineq terminal" in text
    assert len(text.splitlines()) == 1 + 1 + (5 + 1 + 1 + 1) + 10 + (5 + 1 + 5 + 5)
    s = read_summary(tmp_path)
    assert s["result"]["iterations"] == 1 and s["result"]["terminal_trace"] <= 45.0 + 1e-7
    with open(tmp_path / cli.TRAJECTORY_FILE) as fh:
        assert len(list(csv.reader(fh))) == 1 + 6


def test_exit_code_config_error(tmp_path, capsys):
    raw = two_state_raw()
    raw["system"].pop("B")
    assert cli.main(["--config", str(write_raw(tmp_path / "c.toml", raw))]) == cli.EXIT_CONFIG
    assert "system.B" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "absent.toml")]) == cli.EXIT_CONFIG
    (tmp_path / "bad.toml").write_text("mode = [")
    assert cli.main(["--config", str(tmp_path / "bad.toml")]) == cli.EXIT_CONFIG
    ok = write_raw(tmp_path / "ok.toml", two_state_raw())
    assert cli.main(["--config", str(ok), "--seed", "-3"]) == cli.EXIT_CONFIG
    assert cli.main(["--config", str(ok), "--max-iters", "0"]) == cli.EXIT_CONFIG


def test_exit_code_solver_failure(tmp_path):
    raw = two_state_raw(mode="drmpc-open-loop", x0=[20.0, -20.0])
    code = cli.main(["--config", str(write_raw(tmp_path / "c.toml", raw)), "--out", str(tmp_path), "--max-iters", "1"])
    assert code == cli.EXIT_SOLVER
    s = read_summary(tmp_path)
    assert s["status"] == "solver_failure" and "Infeasible" in s["message"]


def test_exit_code_partial_result(tmp_path):
    raw = two_state_raw(x0=[20.0, -20.0], **{"algorithm.max_iters": 1})
    code = cli.main(["--config", str(write_raw(tmp_path / "c.toml", raw)), "--out", str(tmp_path)])
    assert code == cli.EXIT_PARTIAL
    s = read_summary(tmp_path)
    assert s["truncated"] is True and s["status"] == "truncated"
    assert all(t["truncated"] and "Infeasible" in t["reason"] for t in s["result"]["trajectories"])
    with open(tmp_path / cli.TRAJECTORY_FILE) as fh:
        rows = list(csv.reader(fh))
    assert rows[1:] == [["0", "0", "20", "-20", "", ""], ["1", "0", "20", "-20", "", ""]]


def test_invalid_model_in_config_is_a_config_error(tmp_path):
    raw = two_state_raw(**{"cost.R": [[1.0, 0.0], [0.0, -1.0]]})
    assert cli.main(["--config", str(write_raw(tmp_path / "c.toml", raw)), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert read_summary(tmp_path)["status"] == "config_error"


def test_module_entry_point_and_version():
    out = subprocess.run([sys.executable, "-m", "drsisdp", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("drsisdp ")
    out = subprocess.run([sys.executable, "-m", "drsisdp"], capture_output=True, text=True)
    assert out.returncode == 2 and "--config" in out.stderr
