"""Command-line front end: ``fracspde <subcommand> [--config FILE] [options]``.

Data files (CSV/JSON) depend only on the configuration and the seed; the
wall-clock timestamp is written to ``summary.txt`` alone.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import sys
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from fracspde import experiments as ex
from fracspde.config import RunConfig, parse_config, parse_config_text
from fracspde.errors import ConfigError, NumericalError
from fracspde.fem import Mesh1D
from fracspde.mlf import MLParams
from fracspde.noise import sample_path
from fracspde.scheme import discretize, run, wellposedness_check

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4

SUBCOMMANDS = {
    "simulate": "simulate",
    "converge-time": "temporal",
    "converge-space": "spatial",
    "check-ml": "mlcheck",
    "check-noise": "noisecheck",
    "check-smoothing": "smoothing",
    "dump-operator": "dump",
}

DEFAULT_CONFIG = """
[problem]
alpha = 0.75
hurst = 0.75
beta = 1.0
"""

SMOOTHING_RHOS = (0.0, 0.25, 0.5, 1.0)
SMOOTHING_TOLERANCE = 0.05
Z_LIMIT = 3.0


class Output:
    """Writes data files under one directory and collects summary lines."""

    def __init__(self, directory: Path, fmt: str):
        self.directory = directory
        self.fmt = fmt
        self.lines: list[str] = []
        self.files: list[str] = []
        directory.mkdir(parents=True, exist_ok=True)

    @property
    def csv(self) -> bool:
        return self.fmt in ("csv", "both")

    @property
    def json(self) -> bool:
        return self.fmt in ("json", "both")

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        if not self.csv:
            return
        with open(self.directory / name, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.files.append(name)

    def write_text(self, name: str, text: str) -> None:
        (self.directory / name).write_text(text)
        self.files.append(name)

    def write_json(self, name: str, payload: dict[str, Any]) -> None:
        if self.json:
            self.write_text(name, json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")

    def say(self, line: str) -> None:
        self.lines.append(line)

    def finish(self, config: RunConfig, status: int) -> None:
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        head = [f"fracspde {config.kind} run at {stamp}", f"config: {config.source}", ""]
        tail = ["", f"files: {', '.join(self.files) or 'none'}", f"exit status: {status}"]
        (self.directory / "summary.txt").write_text("\n".join(head + self.lines + tail) + "\n")


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# {{{ commands


def _wellposedness(config: RunConfig, out: Output) -> dict[str, Any]:
    diag = wellposedness_check(config.problem_spec())
    out.say(f"wellposedness: value {diag.value:.6g} ({diag.flag}; contraction needs < 1)")
    return {"value": diag.value, "flag": diag.flag}


def cmd_simulate(config: RunConfig, out: Output) -> int:
    spec = config.problem_spec()
    d = config.discretization
    noise = config.noise()
    disc = discretize(spec, Mesh1D(d["n"]))
    path = sample_path(noise, spec.T, d["M"], config.seed)
    traj = run(spec, disc, noise, path)

    times = traj.grid
    out.write_csv(
        "trajectory.csv",
        ("step", "time", "node", "value"),
        (
            (m, times[m], k + 1, traj.states[m, k])
            for m in range(traj.states.shape[0])
            for k in range(traj.states.shape[1])
        ),
    )
    out.write_csv(
        "noise.csv",
        ("mode", "step", "wiener_increment", "fbm_increment"),
        (
            (i + 1, j, path.wiener[i, j], path.fbm[i, j])
            for i in range(path.wiener.shape[0])
            for j in range(path.steps)
        ),
    )
    norms = disc.assembly.mass_norm(traj.states)
    wp = _wellposedness(config, out)
    out.say(f"final mass norm: {norms[-1]:.6g}")
    out.write_json(
        "report.json",
        {"kind": "simulate", "meta": traj.meta, "seed": traj.seed, "wellposedness": wp,
         "mass_norm": norms, "config": config.echo()},
    )
    return EXIT_OK


def _study_status(report: ex.ConvergenceReport, tolerance: float, out: Output) -> int:
    ok = abs(report.slope - report.theory_slope) <= tolerance and report.ci_covers(report.theory_slope)
    out.say(
        f"fitted slope {report.slope:.4f} +/- {report.ci:.4f} (95% CI); "
        f"theory {report.theory_slope:.4f}; tolerance {tolerance:g}: {'pass' if ok else 'FAIL'}"
    )
    if report.failures:
        out.say(f"failed sample runs: {report.failures}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def _write_report(report: ex.ConvergenceReport, config: RunConfig, out: Output) -> None:
    if out.csv:
        out.write_text("convergence.csv", report.to_csv())
    payload = json.loads(report.to_json())
    payload["config"] = {**payload["config"], "run": config.echo()}
    out.write_json("report.json", payload)


def cmd_temporal(config: RunConfig, out: Output) -> int:
    spec = config.problem_spec()
    s = config.study
    levels = config.levels
    report = ex.temporal_study(
        spec,
        Mesh1D(config.discretization["n"]),
        config.noise(),
        [spec.T / M for M in levels],
        s["ref"] // max(levels),
        s["n_mc"],
        config.seed,
        workers=s["workers"],
    )
    _wellposedness(config, out)
    _write_report(report, config, out)
    return _study_status(report, s["tolerance"], out)


def cmd_spatial(config: RunConfig, out: Output) -> int:
    spec = config.problem_spec()
    s = config.study
    report = ex.spatial_study(
        spec,
        config.noise(),
        config.levels,
        s["ref"],
        config.discretization["M"],
        s["n_mc"],
        config.seed,
        workers=s["workers"],
    )
    _wellposedness(config, out)
    _write_report(report, config, out)
    return _study_status(report, s["tolerance"], out)


def cmd_mlcheck(config: RunConfig, out: Output) -> int:
    rows = ex.ml_validation_grid()
    out.write_csv(
        "ml_grid.csv",
        ("alpha", "beta", "x", "value", "reference", "oracle", "rel_error", "pass"),
        ((r.alpha, r.beta, r.x, r.value, r.reference, r.oracle, r.rel_error, r.passed) for r in rows),
    )
    recurrence = max(
        ex.recurrence_residual(MLParams(a, b), -x)
        for a in ex.ML_GRID_ALPHAS
        for b in sorted({a, 1.0})
        for x in np.logspace(-3.0, 3.0, 60)
    )
    failed = [r for r in rows if not r.passed]
    worst = max(r.rel_error for r in rows)
    ok = not failed and recurrence <= ex.ML_TOLERANCE
    out.say(f"grid points: {len(rows)}, failures: {len(failed)}, worst relative error {worst:.3e}")
    out.say(f"recurrence residual: {recurrence:.3e} (tolerance {ex.ML_TOLERANCE:g})")
    out.write_json(
        "report.json",
        {"kind": "mlcheck", "points": len(rows), "failures": len(failed), "worst_rel_error": worst,
         "recurrence_residual": recurrence, "tolerance": ex.ML_TOLERANCE, "passed": ok,
         "config": config.echo()},
    )
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_noisecheck(config: RunConfig, out: Output) -> int:
    hurst = config.problem["hurst"]
    T, M = config.problem["T"], config.discretization["M"]
    n_paths = config.study["n_mc"]
    cov, var = ex.fbm_covariance_check(hurst, T, M, n_paths, config.seed)
    iso = ex.ito_isometry_check(config.noise(), T, M, n_paths, config.seed)

    iu = np.triu_indices(M)
    rows = [("fbm_cov", int(j), int(k), e, s, x, z)
            for j, k, e, s, x, z in zip(iu[0], iu[1], cov.estimate, cov.stderr, cov.exact, cov.z_scores)]
    rows.append(("fbm_var_T", -1, -1, var.estimate[0], var.stderr[0], var.exact[0], var.z_scores[0]))
    rows.append(("ito_isometry", -1, -1, iso.estimate[0], iso.stderr[0], iso.exact[0], iso.z_scores[0]))
    out.write_csv("noise_check.csv", ("check", "j", "k", "estimate", "stderr", "exact", "z"), rows)

    checks = {"fbm_cov": cov.within(Z_LIMIT), "fbm_var_T": var.within(Z_LIMIT),
              "ito_isometry": iso.within(Z_LIMIT)}
    for name, ok in checks.items():
        out.say(f"{name}: {'pass' if ok else 'FAIL'} (within {Z_LIMIT:g} standard errors)")
    out.write_json(
        "report.json",
        {"kind": "noisecheck", "paths": n_paths, "checks": checks,
         "max_z": {"fbm_cov": float(cov.z_scores.max()), "fbm_var_T": float(var.z_scores[0]),
                   "ito_isometry": float(iso.z_scores[0])},
         "config": config.echo()},
    )
    return EXIT_OK if all(checks.values()) else EXIT_TOLERANCE


def cmd_smoothing(config: RunConfig, out: Output) -> int:
    spec = config.problem_spec()
    alpha = spec.fractional.alpha
    disc = discretize(spec, Mesh1D(config.discretization["n"]))
    t_grid = np.logspace(-6.0, 1.0, 141)
    rows, results = [], {}
    ok = True
    for rho in SMOOTHING_RHOS:
        res = ex.smoothing_check(disc.fac, alpha, rho, t_grid)
        good = abs(res.exponent + alpha * rho) <= SMOOTHING_TOLERANCE
        if rho == 0.0:
            good = good and bool(np.all(res.values <= 1.0 + 1e-12))
        ok = ok and good
        results[str(rho)] = {"exponent": res.exponent, "target": -alpha * rho,
                             "scaled_max": res.scaled_max(alpha, rho), "passed": good}
        out.say(f"rho={rho:g}: exponent {res.exponent:.4f} vs {-alpha * rho:.4f}: {'pass' if good else 'FAIL'}")
        rows.extend((rho, t, v, bool(r)) for t, v, r in zip(res.t, res.values, res.regime))
    bounds = ex.contraction_bounds(disc.fac, alpha, np.logspace(-4.0, 1.0, 50))
    ok = ok and bounds.passed
    out.say(
        f"contraction bounds: max E(a,1) {bounds.max_s1:.6g} <= 1, "
        f"max E(a,a) {bounds.max_s2:.6g} <= {bounds.s2_bound:.6g}: {'pass' if bounds.passed else 'FAIL'}"
    )
    out.write_csv("smoothing.csv", ("rho", "t", "m_t", "singular_regime"), rows)
    out.write_json(
        "report.json",
        {"kind": "smoothing", "alpha": alpha, "results": results,
         "bounds": {"max_s1": bounds.max_s1, "max_s2": bounds.max_s2, "s2_bound": bounds.s2_bound,
                    "passed": bounds.passed},
         "config": config.echo()},
    )
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_dump(config: RunConfig, out: Output) -> int:
    spec = config.problem_spec()
    disc = discretize(spec, Mesh1D(config.discretization["n"]))
    for name, mat in (("mass.csv", disc.assembly.mass), ("stiffness.csv", disc.assembly.stiffness)):
        rows, cols = np.nonzero(mat)
        out.write_csv(name, ("row", "col", "value"), zip(rows, cols, mat[rows, cols]))
    lam = disc.fac.eigenvalues
    out.write_csv("eigenvalues.csv", ("index", "real", "imag"),
                  ((i, v.real, v.imag) for i, v in enumerate(lam)))
    out.say(f"n={disc.assembly.n}, smallest eigenvalue {lam[0].real:.6g}, "
            f"eigenvector condition {disc.fac.condition:.3g}")
    out.write_json(
        "report.json",
        {"kind": "dump", "n": disc.assembly.n, "condition": disc.fac.condition,
         "eigenvalues_real": lam.real, "eigenvalues_imag": lam.imag, "config": config.echo()},
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "temporal": cmd_temporal,
    "spatial": cmd_spatial,
    "mlcheck": cmd_mlcheck,
    "noisecheck": cmd_noisecheck,
    "smoothing": cmd_smoothing,
    "dump": cmd_dump,
}


# }}}


def execute(config: RunConfig, out_dir: str | Path | None = None) -> int:
    """Run the study named by ``config.kind`` and write its artifacts."""
    out = Output(Path(out_dir or config.output["dir"]), config.output["format"])
    status = COMMANDS[config.kind](config, out)
    out.finish(config, status)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracspde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker processes for Monte Carlo samples")
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--format", choices=("csv", "json", "both"), help="data files to write")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    kind = SUBCOMMANDS[args.command]

    study: dict[str, Any] = {"kind": kind}
    if args.seed is not None:
        study["seed"] = args.seed
    if args.workers is not None:
        study["workers"] = args.workers
    overrides: dict[str, dict[str, Any]] = {"study": study}
    if args.format is not None:
        overrides["output"] = {"format": args.format}

    try:
        if args.config:
            config = parse_config(args.config, overrides)
        else:
            config = parse_config_text(DEFAULT_CONFIG, "<defaults>", overrides)
        return execute(config, args.out)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
