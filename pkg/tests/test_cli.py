import csv
import json
import re
import shutil

import numpy as np
import pytest

from conftest import small_config
from hybrid_reservoir import cli, plotting
from hybrid_reservoir.cli import ExperimentConfig, parse_int_list, run
from hybrid_reservoir.errors import ConfigurationError
from hybrid_reservoir.reservoir import StateTrajectory


def write_config(path, **over):
    sim = small_config(n_windows=60, n_washin=6).to_dict()
    doc = {"seed": 7, "simulation": sim,
           "readout": {"H_list": [1, 2], "k_list": [0, 1], "d_max": 4}}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(doc.get(k), dict):
            doc[k].update(v)
        else:
            doc[k] = v
    path.write_text(json.dumps(doc, indent=2))
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweep")
    cfg = write_config(d / "exp.json")
    assert run(["sweep", "--config", str(cfg), "--out-dir", str(d / "out")]) == 0
    return d


# -- argument helpers -------------------------------------------------------------------------

def test_parse_int_list():
    assert parse_int_list("1,2,5-8") == (1, 2, 5, 6, 7, 8)
    assert parse_int_list("3") == (3,)


@pytest.mark.parametrize("text", ["", "a", "5-2", "1,,2", "-1"])
def test_parse_int_list_errors(text):
    with pytest.raises(Exception):
        parse_int_list(text)


# -- configuration --------------------------------------------------------------------------------

def test_missing_config_exit_2(tmp_path, capsys):
    assert run(["simulate", "--config", str(tmp_path / "nope.json"),
                "--out-dir", str(tmp_path)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_bad_json_is_line_anchored(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  "simulation": {,\n}\n')
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    assert re.search(r"bad\.json:3:\d+: error:", capsys.readouterr().err)


def test_invalid_value_is_line_anchored(tmp_path, capsys):
    p = write_config(tmp_path / "exp.json")
    doc = json.loads(p.read_text())
    doc["simulation"]["grid"]["dt_s"] = 0.5
    p.write_text(json.dumps(doc, indent=2))
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    m = re.search(r"exp\.json:(\d+): error: .*diffusion bound", err)
    assert m
    assert '"dt_s"' in p.read_text().splitlines()[int(m.group(1)) - 1]


def test_unknown_key_rejected(tmp_path, capsys):
    p = write_config(tmp_path / "exp.json", readout={"colour": "red"})
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    line = int(re.search(r"exp\.json:(\d+):", err).group(1))
    assert "colour" in p.read_text().splitlines()[line - 1]


def test_experiment_round_trip_and_digest(tmp_path):
    cfg = cli.load_config(write_config(tmp_path / "exp.json"))
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.digest() == cfg.digest()
    assert cfg.simulation.seed == 7
    other = ExperimentConfig.from_dict(dict(cfg.to_dict(), seed=8))
    assert other.digest() != cfg.digest()
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(dict(cfg.to_dict(), extra=1))


def test_resolved_config_materializes_defaults(sweep_dir):
    resolved = json.loads((sweep_dir / "out" / "config.resolved.json").read_text())
    cfg = ExperimentConfig.from_dict(resolved)
    assert set(resolved["simulation"]["metabolism"]) >= {"V_max_per_s", "E_div"}
    assert set(resolved["signal"]) >= {"stride_steps", "tau", "beta"}
    assert resolved["readout"]["n_offsets"] == 6
    assert cfg.simulation.seed == 7


# -- simulate ---------------------------------------------------------------------------------------------

def test_simulate_outputs(sweep_dir):
    out = sweep_dir / "out"
    traj = StateTrajectory.load(out / "trajectory.csv")
    assert len(traj) == 54
    assert not (out / "EXTINCT").exists()
    assert len(read_rows(out / "inputs.csv")) == 61


def test_simulate_byte_identical(tmp_path, sweep_dir):
    cfg = sweep_dir / "exp.json"
    assert run(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    a = (tmp_path / "trajectory.csv").read_bytes()
    assert a == (sweep_dir / "out" / "trajectory.csv").read_bytes()
    assert run(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path),
                "--seed", "8"]) == 0
    assert (tmp_path / "trajectory.csv").read_bytes() != a


def test_simulate_worker_invariance(tmp_path, sweep_dir):
    cfg = sweep_dir / "exp.json"
    assert run(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path),
                "--workers", "2"]) == 0
    assert (tmp_path / "trajectory.csv").read_bytes() == \
        (sweep_dir / "out" / "trajectory.csv").read_bytes()


def test_extinction_exit_3(tmp_path):
    sim = small_config(n_windows=20, n_washin=2, metabolism={"p_base_death_per_window": 1.0})
    p = write_config(tmp_path / "exp.json", simulation=sim.to_dict())
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "EXTINCT").exists()
    traj = StateTrajectory.load(tmp_path / "o" / "trajectory.csv")
    assert traj.extinct_at is not None and len(traj) < 18


# -- evaluate ----------------------------------------------------------------------------------------------

def test_results_row_count(tmp_path, sweep_dir):
    traj = sweep_dir / "out" / "trajectory.csv"
    assert run(["evaluate", "--trajectory", str(traj), "--out-dir", str(tmp_path),
                "--h-list", "1", "--k-list", "0"]) == 0
    rows = read_rows(tmp_path / "results.csv")
    assert rows[0] == cli.RESULT_COLUMNS
    assert len(rows) == 1 + 6 + 1
    assert [r[2] for r in rows[1:]] == ["0", "1", "2", "3", "4", "5", "median"]


def test_heatmap_dims(sweep_dir):
    rows = read_rows(sweep_dir / "out" / "heatmap_nrmse.csv")
    assert rows[0] == ["k", "1", "2"]
    assert [r[0] for r in rows[1:]] == ["0", "1"]
    assert all(len(r) == 3 for r in rows)


def test_median_rows_match_offsets(sweep_dir):
    rows = read_rows(sweep_dir / "out" / "results.csv")[1:]
    for H in ("1", "2"):
        for k in ("0", "1"):
            sel = [r for r in rows if r[0] == H and r[1] == k]
            vals = sorted(float(r[5]) for r in sel if r[2] != "median")
            med = [float(r[5]) for r in sel if r[2] == "median"][0]
            assert med == pytest.approx((vals[2] + vals[3]) / 2, rel=1e-12)


def test_evaluate_rerun_identical_bytes(tmp_path, sweep_dir):
    traj = sweep_dir / "out" / "trajectory.csv"
    for sub in ("a", "b"):
        assert run(["evaluate", "--trajectory", str(traj), "--out-dir", str(tmp_path / sub),
                    "--h-list", "1,2", "--k-list", "0-1", "--workers",
                    "1" if sub == "a" else "3"]) == 0
    for name in ("results.csv", "heatmap_nrmse.csv", "correlation_k0.csv", "correlation_k1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / name).read_bytes() == (sweep_dir / "out" / name).read_bytes()


def test_insufficient_data_exit_4(tmp_path, sweep_dir, capsys):
    traj = sweep_dir / "out" / "trajectory.csv"
    assert run(["evaluate", "--trajectory", str(traj), "--out-dir", str(tmp_path),
                "--h-list", "50", "--k-list", "4"]) == 4
    assert "insufficient" in capsys.readouterr().err


def test_corrupt_trajectory_exit_5(tmp_path):
    bad = tmp_path / "t.csv"
    bad.write_text("not a trajectory\n")
    assert run(["evaluate", "--trajectory", str(bad), "--out-dir", str(tmp_path)]) == 5


# -- memory -------------------------------------------------------------------------------------------------

def delay_line_trajectory(path, L, T=600):
    u = np.random.default_rng(L).uniform(size=T)
    s = np.zeros((T, 3 * L))  # three blocks so the file has a whole number of voxels
    for j in range(min(L + 1, 3 * L)):
        s[j:, j] = u[:T - j]
    StateTrajectory(s, u, {"seed": 0}).save(path)
    return path


def test_memory_delay_line_fixture(tmp_path, capsys):
    traj = delay_line_trajectory(tmp_path / "t.csv", 10)
    assert run(["memory", "--trajectory", str(traj), "--out-dir", str(tmp_path),
                "--d-max", "30"]) == 0
    _, _, mc = cli.read_memory(tmp_path / "memory.csv")
    assert abs(mc - 10) <= 0.5
    assert "MC=" in capsys.readouterr().out


def test_memory_d_max_zero(tmp_path, sweep_dir):
    traj = sweep_dir / "out" / "trajectory.csv"
    assert run(["memory", "--trajectory", str(traj), "--out-dir", str(tmp_path),
                "--d-max", "0"]) == 0
    rows = read_rows(tmp_path / "memory.csv")
    assert rows[0] == ["d", "r2"] and len(rows) == 2
    assert rows[1][0] == "MC" and float(rows[1][1]) == 0.0


def test_h_star_is_exact(sweep_dir):
    out = sweep_dir / "out"
    _, r2, mc = cli.read_memory(out / "memory.csv")
    rows = read_rows(out / "memory_summary.csv")
    assert rows[0] == ["mc", "h_star"]
    assert float(rows[1][0]) == mc
    assert float(rows[1][1]) == 0.7 * mc
    assert len(r2) == 4 and mc == pytest.approx(r2.sum())


# -- plot ----------------------------------------------------------------------------------------------------

def test_plot_outputs(sweep_dir):
    out = sweep_dir / "out"
    for name in ("heatmap_nrmse.svg", "nrmse_vs_H.svg", "correlation_vs_H.svg",
                 "memory_curve.svg"):
        assert (out / name).read_text().startswith("<?xml")


def test_heatmap_cell_count(sweep_dir):
    svg = (sweep_dir / "out" / "heatmap_nrmse.svg").read_text()
    cells = re.findall(r'id="cell-k(\d+)-H(\d+)"', svg)
    assert sorted(cells) == sorted((k, H) for k in ("0", "1") for H in ("1", "2"))


def test_plot_bytes_deterministic(tmp_path, sweep_dir):
    out = sweep_dir / "out"
    assert run(["plot", "--in-dir", str(out), "--out-dir", str(tmp_path)]) == 0
    for svg in out.glob("*.svg"):
        assert (tmp_path / svg.name).read_bytes() == svg.read_bytes()


def test_empty_series_omitted_from_legend(tmp_path):
    series = {0: np.array([[1.0, 0.9], [2.0, 0.7]]), 3: np.zeros((0, 2))}
    svg = plotting.correlation(series, tmp_path / "c.svg").read_text()
    assert "<!-- k=0 -->" in svg and "k=3" not in svg


def test_plot_schema_error_exit_5(tmp_path):
    (tmp_path / "heatmap_nrmse.csv").write_text("k,one\n0,0.5\n")
    assert run(["plot", "--out-dir", str(tmp_path)]) == 5
    (tmp_path / "heatmap_nrmse.csv").unlink()
    (tmp_path / "memory.csv").write_text("d,r2\n1,0.5\n")
    assert run(["plot", "--out-dir", str(tmp_path)]) == 5


def test_plot_nothing_to_do_exit_5(tmp_path):
    assert run(["plot", "--out-dir", str(tmp_path)]) == 5


# -- provenance -------------------------------------------------------------------------------------------------

def test_manifest_references_digest_and_hashes(sweep_dir):
    out = sweep_dir / "out"
    m = json.loads((out / "manifest.json").read_text())
    digest = cli.load_config(sweep_dir / "exp.json").digest()
    assert set(m) == {"simulate", "evaluate", "memory", "plot"}
    for entry in m.values():
        assert entry["config_digest"] == digest
        for name, sha in entry["outputs"].items():
            assert cli._sha256(out / name) == sha
    assert "wall_time_s" in m["simulate"] and m["simulate"]["seed"] == 7
    traj = StateTrajectory.load(out / "trajectory.csv")
    assert traj.meta["experiment_digest"] == digest


def test_full_pipeline_byte_reproducible(tmp_path, sweep_dir):
    shutil.copy(sweep_dir / "exp.json", tmp_path / "exp.json")
    assert run(["sweep", "--config", str(tmp_path / "exp.json"),
                "--out-dir", str(tmp_path / "out")]) == 0
    for f in (sweep_dir / "out").iterdir():
        if f.name != "manifest.json":
            assert (tmp_path / "out" / f.name).read_bytes() == f.read_bytes(), f.name
