import json

import numpy as np
import pytest

from arrayqi import cli
from arrayqi.errors import ConfigError
from arrayqi.greens import LatticeParams, collective_rate_2d, phase_matched_shift
from arrayqi.memory import exponential_pulse, write_pulse_csv, zero_pulse


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL = """
[lattice]
a = 0.6
n_side = 8
[beam]
waist_over_a = 5.0
[disorder]
sigmas = [0.02, 0.05]
realizations = 3
base_seed = 7
"""


@pytest.mark.parametrize("name", cli.PRESETS)
def test_presets_validate(name):
    cfg = cli.load_config(preset=name)
    assert cfg.schema == cli.SCHEMA_VERSION and cfg.command in cli.COMMANDS


def test_fig4_presets():
    a = cli.load_config(preset="fig4a")
    assert (a.lattice.a, a.lattice.n_side, a.beam.plane_z, a.disorder.realizations) == (0.6, 30, 5.0, 50)
    assert a.waist == pytest.approx(0.25 * 18.0)
    assert min(a.disorder.sigmas) == 0.02 and max(a.disorder.sigmas) == 0.1
    b = cli.load_config(preset="fig4b")
    assert b.waist == pytest.approx(8 * 0.6) and b.sweep.n_sides == list(range(20, 35, 2))


def test_fig8_presets():
    a, b = cli.load_config(preset="fig8a"), cli.load_config(preset="fig8b")
    assert (a.lattice.nz, a.lattice.a_z, a.layers.eta, a.layers.gamma_loss_over_gamma0) == (10, 1.0, 1.0, 0.05)
    assert b.lattice.a_z == 0.5


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="lattice.bogus"):
        cli.config_from_dict({"lattice": {"bogus": 1}})
    with pytest.raises(ConfigError, match="section"):
        cli.config_from_dict({"nope": {}})


@pytest.mark.parametrize("doc", [
    {"schema": 2},
    {"lattice": {"a": -1.0}},
    {"lattice": {"orientation": "w"}},
    {"beam": {"waist": 2.0, "waist_over_a": 3.0}},
    {"disorder": {"distribution": "cauchy"}},
    {"scan": {"center": "middle"}},
    {"memory": {"mode": "3d"}},
    {"layers": {"eta": 1.5}},
])
def test_invalid_values_rejected(doc):
    with pytest.raises(ConfigError):
        cli.config_from_dict(doc)


def test_hash_ignores_output_only():
    a = cli.config_from_dict({"output": {"directory": "x"}})
    b = cli.config_from_dict({"output": {"directory": "y"}})
    c = cli.config_from_dict({"lattice": {"a": 0.7}})
    assert a.hash() == b.hash() != c.hash()


def test_exit_code_config_error(tmp_path, capsys):
    assert cli.run(["spectrum", "--config", write(tmp_path, "[lattice]\nbogus = 1\n")]) == 2
    assert cli.run(["spectrum", "--config", str(tmp_path / "missing.toml")]) == 2
    assert cli.run(["spectrum", "--preset", "nope"]) == 2
    assert cli.run(["spectrum", "--config", write(tmp_path, SMALL), "--workers", "0"]) == 2


def test_exit_code_numerical_error(tmp_path):
    cfg = write(tmp_path, SMALL + "[scan]\ncenter = '40.0'\nhalf_width = 1.0\nsteps = 11\n")
    assert cli.run(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.run(["spectrum", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    cfg = cli.load_config(write(tmp_path, SMALL, "again.toml"))
    head = (out / "spectrum.csv").read_text().splitlines()
    assert head[0].startswith(f"# config_hash={cfg.hash()}") and head[1] == "delta_p,R,T,L"
    fit = json.loads((out / "spectrum.json").read_text())
    assert fit["config_hash"] == cfg.hash() and 0 < fit["fit"]["r0"] < 1
    rec = json.loads((out / "run.json").read_text())
    assert rec["config_hash"] == cfg.hash() and rec["base_seed"] == 7 and "spectrum.csv" in rec["files"]
    assert rec["code_version"]


def test_disorder_sweep_deterministic_across_workers(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert cli.run(["disorder-sweep", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.run(["disorder-sweep", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("disorder_sweep.csv", "disorder_realizations.csv", "disorder_sweep.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = (tmp_path / "a" / "disorder_realizations.csv").read_text().splitlines()
    assert len(rows) == 2 + 6


def test_seed_flag_changes_results(tmp_path):
    cfg = write(tmp_path, SMALL)
    cli.run(["disorder-sweep", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.run(["disorder-sweep", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "8"])
    a = (tmp_path / "a" / "disorder_sweep.csv").read_text().splitlines()
    b = (tmp_path / "b" / "disorder_sweep.csv").read_text().splitlines()
    assert "base_seed=8" in b[0] and a[2:] != b[2:]


def test_ordered_sweep_one_row():
    cfg = cli.config_from_dict({"lattice": {"n_side": 8}, "beam": {"waist_over_a": 5.0},
                                "disorder": {"sigma": 0.0, "realizations": 5}})
    rows, points = cli.disorder_sweep(cfg)
    assert len(rows) == 1 and len(points) == 1 and points[0].mean_inv_C > 0


def test_loglog_slope():
    x = np.array([0.02, 0.05, 0.1])
    assert cli.loglog_slope(x, 3 * x**2) == pytest.approx(2.0)


def test_size_sweep_rows():
    cfg = cli.config_from_dict({"lattice": {"n_side": 8}, "beam": {"waist_over_a": 5.0},
                                "sweep": {"n_sides": [8, 10]}})
    pts = cli.size_sweep(cfg)
    assert [p.n_side for p in pts] == [8, 10] and all(p.waist == pytest.approx(3.0) for p in pts)


def test_layers_single_layer_ridge():
    cfg = cli.config_from_dict({"lattice": {"nz": 1}, "sweep": {"a_min": 0.6, "a_max": 0.8, "a_steps": 3}})
    for scan, peak in cli.layers_map(cfg):
        assert peak.delta_prime == 0.0 and abs(peak.peak) < 1e-6 * peak.gamma0
        half = scan.R >= scan.R.max() / 2
        assert np.ptp(scan.detunings[half]) == pytest.approx(peak.gamma0, rel=0.1)


def test_layers_map_spotlight(tmp_path):
    cfg = cli.load_config(preset="fig8a")
    cfg.sweep.a_steps = 3
    out = tmp_path / "o"
    assert cli.cmd_layers_map(cfg, out.mkdir() or out) is not None
    lines = (out / "layers_peaks.csv").read_text().splitlines()
    assert lines[1] == "a,peak_over_gamma0,delta_prime_over_gamma0,difference_over_gamma0,C"
    row = [float(v) for v in next(l for l in lines[2:] if l.startswith("6.8")).split(",")]
    lat = LatticeParams(0.68, 1.0)
    assert row[2] == pytest.approx(phase_matched_shift(lat, 10) / collective_rate_2d(lat))
    assert abs(row[3]) < 0.05
    grid = (out / "layers_map.csv").read_text().splitlines()
    assert grid[1] == "a,detuning_over_gamma0,R,delta_prime_over_gamma0" and len(grid) == 2 + 4 * 81


def test_memory_demo(tmp_path):
    out = tmp_path / "m"
    assert cli.run(["memory", "--preset", "memory", "--out", str(out)]) == 0
    summary = json.loads((out / "memory_summary.json").read_text())
    assert summary["e_s"] == pytest.approx(10 / 11, abs=0.01)
    assert (out / "memory_trajectory.csv").read_text().splitlines()[1].startswith("t,re_P")


def test_memory_zero_control(tmp_path):
    h = exponential_pulse(0.05, step=0.5)
    write_pulse_csv(h, tmp_path / "h.csv")
    write_pulse_csv(zero_pulse(h), tmp_path / "z.csv")
    cfg = write(tmp_path, f'[memory]\npulse_file = "{tmp_path / "h.csv"}"\ncontrol_file = "{tmp_path / "z.csv"}"\n')
    assert cli.run(["memory", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "memory_summary.csv").read_text().splitlines()
    assert rows[1].split(",")[0] == "e_s" and float(rows[2].split(",")[0]) == 0.0


def test_memory_bad_pulse_file(tmp_path):
    cfg = write(tmp_path, f'[memory]\npulse_file = "{tmp_path / "none.csv"}"\n')
    assert cli.run(["memory", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def eig_rows(path):
    return np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)


def test_eigs_two_atoms(tmp_path):
    cfg = write(tmp_path, "[lattice]\nn_side = 1\nnz = 2\na_z = 0.5\n")
    assert cli.run(["eigs", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert eig_rows(tmp_path / "o" / "eigs.csv").shape[0] == 2


def test_eigs_subradiant_mode(tmp_path):
    assert cli.run(["eigs", "--preset", "eigs", "--out", str(tmp_path / "o")]) == 0
    rows = eig_rows(tmp_path / "o" / "eigs.csv")
    assert np.any((rows[:, 5] > 0.9) & (rows[:, 3] < 0.01))


def test_eigs_m_point_inside_light_cone(tmp_path):
    cfg = write(tmp_path, "[lattice]\na = 0.8\nn_side = 30\n[beam]\nwaist_over_a = 10.0\n")
    assert cli.run(["eigs", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = eig_rows(tmp_path / "o" / "eigs.csv")
    assert not np.any((rows[:, 5] > 0.9) & (rows[:, 3] < 0.01))
