"""Command-line interface, config parsing, snapshots, and run artifacts."""

import os

import numpy as np
import pytest

from polymg import cli
from polymg import config as cfgm
from polymg import mesh as msh
from polymg import space as spc


SMOKE_CFG = """
mesh.dim = 2
mesh.subdivisions = 8 8
degree = 1
time.t_final = 5e-4
solver.reduction_tol = 1e-8
mg.levels = 2
output.probes = 0.5 0.5
output.snapshot_every = 2
"""


def test_config_parse_and_echo():
    cfg = cfgm.parse_config(SMOKE_CFG)
    assert cfg.mesh.subdivisions == (8, 8)
    assert cfg.degree == 1
    assert cfg.time.n_steps == 5
    echo = cfg.echo()
    cfg2 = cfgm.parse_config(echo)
    assert cfg2.echo() == echo


def test_config_rejects_unknown_keys():
    with pytest.raises(cfgm.ConfigError):
        cfgm.parse_config("mesh.shape = 8 8")
    with pytest.raises(cfgm.ConfigError):
        cfgm.parse_config("nonsense line without equals\nx")
    with pytest.raises(cfgm.ConfigError):
        cfgm.parse_config("solver.precond = magic")


def test_run_command_artifacts(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(SMOKE_CFG)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    csv = (out / "iterations.csv").read_text().strip().splitlines()
    assert csv[0] == cli.CSV_HEADER
    assert len(csv) == 1 + 5
    manifest = (out / "manifest.txt").read_text()
    # every file named in the manifest exists
    in_files = False
    for line in manifest.splitlines():
        if line.strip() == "[files]":
            in_files = True
            continue
        if line.startswith("["):
            in_files = False
        if in_files and line.strip():
            assert (out / line.strip()).exists()
    assert "mesh.subdivisions = 8 8" in manifest
    probes = (out / "probes.csv").read_text().strip().splitlines()
    assert len(probes) == 1 + 5
    assert (out / "summary.txt").exists()
    assert (out / "snapshot_000002.txt").exists()


def test_run_command_bad_config(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("solver.precond = nope\n")
    rc = cli.main(["run", "--config", str(cfg_path)])
    assert rc == 2


def test_run_command_solver_failure(tmp_path):
    cfg_path = tmp_path / "fail.cfg"
    cfg_path.write_text(SMOKE_CFG + "solver.max_iter = 1\n"
                        "solver.reduction_tol = 0\nsolver.abs_tol = 1e-300\n")
    rc = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_hierarchy_command_partitions(tmp_path):
    out = tmp_path / "hier.txt"
    rc = cli.main(["hierarchy", "--mesh", "8x8", "--levels", "2",
                   "--out", str(out)])
    assert rc == 0
    members = []
    for line in out.read_text().strip().splitlines():
        toks = line.split()
        assert toks[0] == "1"
        members.extend(int(t) for t in toks[4:])
    assert sorted(members) == list(range(64))


def test_bench_op_command(capsys):
    rc = cli.main(["bench-op", "--mesh", "4x4", "--degrees", "1", "2",
                   "--reps", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "matrix-free" in out


def test_verify_command():
    assert cli.main(["verify"]) == 0


def test_snapshot_roundtrip_bitwise(tmp_path):
    m = msh.generate_structured(2, [0, 0], [1, 1], (3, 3))
    s = spc.space_from_mesh(m, 2)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(s.total_dofs)
    path = tmp_path / "snap.txt"
    cli.write_snapshot(u, s, path)
    pts, u2, mv = cli.read_snapshot(path)
    assert u2.shape == (s.total_dofs,)
    np.testing.assert_array_equal(u, u2)            # bitwise round-trip
    np.testing.assert_array_equal(mv, 85.7 * u - 84.0)
    assert pts.shape == (s.total_dofs, 2)


def test_snapshot_constant_field(tmp_path):
    m = msh.generate_structured(2, [0, 0], [1, 1], (2, 2))
    s = spc.space_from_mesh(m, 1)
    path = tmp_path / "snapc.txt"
    cli.write_snapshot(np.full(s.total_dofs, 0.25), s, path)
    _, u, _ = cli.read_snapshot(path)
    assert np.all(u == 0.25)
    rows = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == s.total_dofs


def test_operator_flag_override(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(SMOKE_CFG)
    out = tmp_path / "mb"
    rc = cli.main(["run", "--config", str(cfg_path), "--out", str(out),
                   "--operator", "matrix-based", "--precond", "bjacobi"])
    assert rc == 0
    manifest = (out / "manifest.txt").read_text()
    assert "operator = matrix-based" in manifest
    assert "solver.precond = bjacobi" in manifest
