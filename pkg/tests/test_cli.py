import hashlib
import json

import numpy as np
import pytest

from chcontrol.cli import (
    ConfigError,
    initial_control,
    load_field_raw,
    main,
    parse_config,
    save_field_raw,
)
from chcontrol.grid import FieldPair, StripGeometry

MINIMAL = """
[geometry]
Nx = 8
Ny = 4
"""

SMALL_RUN = """
[geometry]
Lx = 2.0
Ly = 1.0
Nx = 8
Ny = 4

[phys]
tau = 1.0
t_final = 0.1
dt = 0.02

[initial]
type = "stripe"
amplitude = 0.4

[cost]
beta = [1.0, 0.0, 0.0, 0.0, 1e-3]

[control]
init = "sin-shear"
amplitude = 0.3

[quench]
alpha0 = 0.2
levels = 3
"""

GRADCHECK = """
[geometry]
Lx = 2.0
Ly = 1.0
Nx = 16
Ny = 8

[phys]
tau = 1.0
t_final = 0.2
dt = 0.02

[initial]
type = "stripe"
amplitude = 0.5

[cost]
beta = [1.0, 0.5, 0.8, 0.4, 1e-3]
target_q = 0.1
target_sigma = -0.05
target_omega = 0.2

[control]
u_bar = 5.0
r0 = 100.0
init = "sin-shear"
amplitude = 0.4

[quench]
alpha0 = 0.2

[solver]
newton_tol = 1e-12
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_fills_defaults(tmp_path):
    spec = parse_config(write(tmp_path, MINIMAL))
    assert spec.geom.Nx == 8 and spec.geom.Ny == 4
    assert spec.geom.Lx == 2.0  # default
    assert spec.phys.tau == 1.0
    assert spec.quench_levels == 14
    assert spec.output_dir == "out"


def test_config_validation_names_assumptions(tmp_path):
    bad = MINIMAL + "\n[phys]\ntau = 0.0\n\n[cost]\nbeta = [0,0,0,0,0]\n"
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, bad))
    text = "; ".join(err.value.violations)
    assert "(A2)" in text
    assert "(A4)" in text


def test_config_rejects_interior_violation(tmp_path):
    bad = MINIMAL + "\n[initial]\ntype = \"constant\"\nvalue = 1.0\n"
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, bad))
    assert any("(A1)" in v for v in err.value.violations)


def test_config_parse_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "not [valid toml"))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, MINIMAL + "\n[bogus]\nx = 1\n"))


def test_field_raw_round_trip(tmp_path):
    geom = StripGeometry(2.0, 1.0, 8, 4)
    rng = np.random.default_rng(0)
    pair = FieldPair(
        rng.standard_normal((4, 8)), rng.standard_normal(8), rng.standard_normal(8)
    )
    files = save_field_raw(tmp_path / "field", pair, geom, 0.25)
    assert all(f.exists() for f in files)
    back = load_field_raw(tmp_path / "field.f64", geom)
    assert np.array_equal(back.to_vector(), pair.to_vector())
    meta = json.loads((tmp_path / "field.json").read_text())
    assert meta["dims"] == [4, 8]
    assert meta["time"] == 0.25


def test_initial_from_file(tmp_path):
    geom = StripGeometry(2.0, 1.0, 8, 4)
    pair = FieldPair.constant(0.25, geom)
    save_field_raw(tmp_path / "rho0", pair, geom, 0.0)
    cfg = MINIMAL + "\n[initial]\ntype = \"file\"\npath = \"rho0.f64\"\n"
    spec = parse_config(write(tmp_path, cfg))
    assert spec.phys.rho0.bulk[0, 0] == 0.25


def test_cli_forward_and_determinism(tmp_path):
    cfg = write(tmp_path, SMALL_RUN)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["forward", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["forward", "--config", str(cfg), "--out", str(out2)]) == 0
    for name in ("series.csv", "rho_final.f64", "mu_final.f64", "rho_final.csv"):
        h1 = hashlib.sha256((out1 / name).read_bytes()).hexdigest()
        h2 = hashlib.sha256((out2 / name).read_bytes()).hexdigest()
        assert h1 == h2, name
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["stages"]["forward"] == "ok"
    assert "series.csv" in manifest["files"]
    # conservation visible in the series
    rows = (out1 / "series.csv").read_text().strip().splitlines()[1:]
    means = [float(r.split(",")[2]) for r in rows]
    assert max(abs(m - means[0]) for m in means) < 1e-10


def test_cli_forward_obstacle_mode(tmp_path):
    cfg = write(tmp_path, SMALL_RUN)
    out = tmp_path / "obs"
    assert main(["forward", "--config", str(cfg), "--out", str(out), "--mode", "obstacle"]) == 0


def test_cli_adjoint(tmp_path):
    cfg = write(tmp_path, SMALL_RUN)
    out = tmp_path / "adj"
    assert main(["adjoint", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "adjoint_diagnostics.csv").read_text().strip().splitlines()
    assert rows[0] == "step,mean_q,norm_q,norm_Nq,curvature_norm"
    assert len(rows) == 1 + 5  # one per step
    mean_q = [abs(float(r.split(",")[1])) for r in rows[1:]]
    assert max(mean_q) < 1e-12


def test_cli_gradcheck_reference(tmp_path):
    cfg = write(tmp_path, GRADCHECK)
    out = tmp_path / "gc"
    assert main(["gradcheck", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 0
    rep = json.loads((out / "gradcheck.json").read_text())
    assert rep["max_rel_err"] <= 1e-6


def test_cli_noperator_check(tmp_path):
    cfg = write(tmp_path, SMALL_RUN)
    out = tmp_path / "nop"
    assert main(["noperator-check", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "noperator_check.json").read_text())
    assert rep["pass"] is True


def test_cli_optimize(tmp_path):
    cfg = write(tmp_path, SMALL_RUN + "\n[solver]\nopt_max_iter = 4\n")
    out = tmp_path / "opt"
    assert main(["optimize", "--config", str(cfg), "--out", str(out)]) == 0
    hist = (out / "history.csv").read_text().strip().splitlines()
    assert hist[0].startswith("iter,cost,step_len,stationarity")
    costs = [float(r.split(",")[1]) for r in hist[1:]]
    assert all(c1 >= c2 - 1e-15 for c1, c2 in zip(costs, costs[1:]))
    summary = json.loads((out / "optimize_summary.json").read_text())
    assert summary["iterations"] >= 1


def test_cli_config_error_exit_code(tmp_path):
    bad = write(tmp_path, MINIMAL + "\n[phys]\ntau = -1.0\n")
    assert main(["forward", "--config", str(bad)]) == 2


def test_initial_control_modes(tmp_path):
    spec = parse_config(write(tmp_path, SMALL_RUN))
    u = initial_control(spec)
    assert u.mode == "shear"
    assert u.values.shape == (spec.phys.n_steps, spec.geom.Ny)
    assert np.max(np.abs(u.values)) > 0  # sin-shear preset
