import json

import numpy as np
import pytest

from fracspde import cli
from fracspde.config import CATALOG, parse_config, parse_config_text
from fracspde.errors import ConfigError

VALID = """
[problem]
alpha = 0.75
hurst = 0.75
beta = 1.0
"""

SMALL = """
[problem]
alpha = 0.75
hurst = 0.75
beta = 1.0
f = linear
f_c = -0.5
g = sin_profile
g_c = 0.2
phi = sin_profile
phi_c = 0.5

[discretization]
n = 7
M = 8
n_modes = 4

[study]
levels = 4, 8, 16
ref = 32
n_mc = 4
seed = 12
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_valid_config_defaults():
    cfg = parse_config_text(VALID)
    assert cfg.kind == "simulate" and cfg.seed == 0
    assert cfg.discretization == {"n": 63, "M": 256, "n_modes": 64, "decay": 3.0}
    spec = cfg.problem_spec()
    assert spec.fractional.alpha == 0.75 and spec.lipschitz_L == 0.0


def test_alpha_out_of_range_names_interval():
    with pytest.raises(ConfigError, match=r"\(1/2, 1\)"):
        parse_config_text(VALID.replace("alpha = 0.75", "alpha = 0.4"))


def test_beta_below_bound():
    with pytest.raises(ConfigError, match=r"1 - 2H"):
        parse_config_text(VALID.replace("beta = 1.0", "beta = -0.6"))


def test_all_violations_reported():
    text = VALID.replace("alpha = 0.75", "alpha = 0.4") + "\n[discretization]\ndecay = 0.5\n[study]\nkind = temporal\nlevels = 8, 12\n"
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    problems = info.value.problems
    assert len(problems) >= 4
    joined = " ".join(problems)
    for fragment in ("alpha", "decay", "at least 3", "powers of 2"):
        assert fragment in joined


def test_unknown_key_and_section():
    with pytest.raises(ConfigError) as info:
        parse_config_text(VALID + "color = blue\n[extra]\nx = 1\n")
    assert any("'color'" in p for p in info.value.problems)
    assert any("[extra]" in p for p in info.value.problems)


def test_missing_required_and_bad_type():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[problem]\nalpha = abc\nhurst = 0.7\n")
    joined = " ".join(info.value.problems)
    assert "'beta'" in joined and "abc" in joined


def test_declared_lipschitz_must_cover_catalog():
    text = SMALL.replace("phi_c = 0.5", "phi_c = 0.5\nlipschitz_L = 0.01")
    with pytest.raises(ConfigError, match="catalog constant"):
        parse_config_text(text)
    cfg = parse_config_text(SMALL)
    # max(c_f^2, 2 c_g^2 tr Q)
    tq = sum(i**-3.0 for i in range(1, 5))
    assert cfg.problem_spec().lipschitz_L == pytest.approx(max(0.25, 2 * 0.04 * tq))


def test_catalog_functions():
    x = np.linspace(0, 1, 5)
    u = np.linspace(-1, 1, 5)
    g = CATALOG["g"]["sin_profile"].build(0.3)
    np.testing.assert_allclose(g(x, u), 0.3 * np.sin(np.pi * x) * np.sin(u))
    for name, entry in CATALOG["x0"].items():
        # shipped initial values vanish on the boundary
        assert np.all(np.abs(entry.build(1.0)(np.array([0.0, 1.0]))) <= 1e-15), name


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config("/nonexistent/run.ini")


# {{{ command line


def test_cli_config_error_exit(tmp_path, capsys):
    path = write(tmp_path, VALID.replace("alpha = 0.75", "alpha = 0.4"))
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "alpha" in capsys.readouterr().err


def test_cli_numerical_exit(tmp_path):
    path = write(tmp_path, SMALL.replace("[discretization]", "diffusion = 1.0\nc0 = -200.0\n[discretization]"))
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERICAL


def test_cli_simulate_outputs(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "nested" / "dir"
    assert cli.main(["simulate", "--config", str(path), "--out", str(out)]) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "step,time,node,value"
    assert len(rows) == 1 + 9 * 7
    assert (out / "noise.csv").read_text().splitlines()[0] == "mode,step,wiener_increment,fbm_increment"
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["problem"]["alpha"] == 0.75
    assert "wellposedness" in (out / "summary.txt").read_text()


def test_cli_format_flag(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "o"
    cli.main(["simulate", "--config", str(path), "--out", str(out), "--format", "json"])
    assert (out / "report.json").exists() and not (out / "trajectory.csv").exists()


def test_cli_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, SMALL)
    for sub, name in (("simulate", "trajectory.csv"), ("converge-time", "convergence.csv")):
        a, b = tmp_path / f"{sub}-a", tmp_path / f"{sub}-b"
        cli.main([sub, "--config", str(path), "--out", str(a)])
        cli.main([sub, "--config", str(path), "--out", str(b)])
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_cli_seed_flag_changes_data(tmp_path):
    path = write(tmp_path, SMALL)
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "noise.csv").read_bytes() != (tmp_path / "b" / "noise.csv").read_bytes()


def test_cli_temporal_report(tmp_path):
    path = write(tmp_path, SMALL)
    status = cli.main(["converge-time", "--config", str(path), "--out", str(tmp_path / "t")])
    assert status in (cli.EXIT_OK, cli.EXIT_TOLERANCE)
    report = json.loads((tmp_path / "t" / "report.json").read_text())
    assert report["kind"] == "temporal" and len(report["axis"]) == 3
    assert report["config"]["run"]["study"]["seed"] == 12
    assert "fitted slope" in (tmp_path / "t" / "summary.txt").read_text()


def test_cli_spatial(tmp_path):
    text = SMALL.replace("levels = 4, 8, 16\nref = 32", "levels = 3, 7, 15\nref = 31")
    path = write(tmp_path, text)
    status = cli.main(["converge-space", "--config", str(path), "--out", str(tmp_path / "s")])
    assert status in (cli.EXIT_OK, cli.EXIT_TOLERANCE)
    assert (tmp_path / "s" / "convergence.csv").exists()


def test_cli_checks_without_config(tmp_path):
    assert cli.main(["check-smoothing", "--out", str(tmp_path / "sm")]) == 0
    assert cli.main(["dump-operator", "--out", str(tmp_path / "d")]) == 0
    mass = (tmp_path / "d" / "mass.csv").read_text().splitlines()
    assert mass[0] == "row,col,value" and len(mass) == 1 + 3 * 63 - 2


def test_cli_noise_check(tmp_path):
    path = write(tmp_path, SMALL.replace("n_mc = 4", "n_mc = 400"))
    status = cli.main(["check-noise", "--config", str(path), "--out", str(tmp_path / "n")])
    assert status in (cli.EXIT_OK, cli.EXIT_TOLERANCE)
    header = (tmp_path / "n" / "noise_check.csv").read_text().splitlines()[0]
    assert header == "check,j,k,estimate,stderr,exact,z"


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["dump-operator", "--out", str(blocker / "sub")]) == cli.EXIT_CONFIG


# }}}
