"""Command-line front end: configured runs, diagnostics, parameter sweeps.

Configs are flat INI files (key = value under [section] headers); see the
README for the full grammar.  Three commands:

  run <config>       twin-experiment run(s); writes metrics.csv, report.txt,
                     optional theta_t<time>.raster snapshots per run directory
  validate <config>  assumption flags, observation-lattice alignment, and the
                     relaxation-stability proxy; prints pass/warn lines
  sweep <config>     grid of (mu, spacing) runs; writes one sorted sweep.csv

The output root defaults to the working directory and can be moved with the
POROUSDA_OUTPUT_ROOT environment variable.  Exit status is 0 only when every
requested run completed.
"""

import argparse
import configparser
import inspect
import os
import sys
from pathlib import Path

import numpy as np

from . import driver, scenarios
from .fields import NodalField, l2_diff, quadrature
from .linalg import NoConvergenceError, SolverConfig
from .observation import AlignmentError, SparseGrid


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 2


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    return parser


def _floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def build_scenario(cfg):
    sect = cfg["scenario"] if cfg.has_section("scenario") else {}
    name = sect.get("name", "")
    factory = scenarios.BUILTIN_SCENARIOS.get(name)
    if factory is None:
        known = ", ".join(sorted(scenarios.BUILTIN_SCENARIOS))
        raise ValueError(f"unknown scenario {name!r} (known: {known})")

    kwargs = {}
    accepted = inspect.signature(factory).parameters
    if cfg.has_option("mesh", "nx") and "nx" in accepted:
        kwargs["nx"] = cfg.getint("mesh", "nx")
    for key in ("seed", "raster"):
        if key in sect and key in accepted:
            kwargs[key] = int(sect[key]) if key == "seed" else sect[key]
    scenario = factory(**kwargs)

    overrides = {}
    if cfg.has_option("mesh", "nx"):
        overrides["nx"] = cfg.getint("mesh", "nx")
        overrides["ny"] = cfg.getint("mesh", "ny") if cfg.has_option("mesh", "ny") \
            else overrides["nx"]
    for section, key, conv in (("time", "dt", cfg.getfloat),
                               ("time", "fine_per_coarse", cfg.getint),
                               ("time", "t_end", cfg.getfloat),
                               ("assimilation", "spacing", cfg.getfloat)):
        if cfg.has_option(section, key):
            overrides[key] = conv(section, key)
    if cfg.has_option("assimilation", "mu"):
        # a list here is a run matrix handled by cmd_run, not a scenario field
        mu_values = _floats(cfg.get("assimilation", "mu"))
        if len(mu_values) == 1:
            overrides["mu"] = mu_values[0]
    if cfg.has_option("assimilation", "kind"):
        overrides["observation_kind"] = cfg.get("assimilation", "kind")
    if cfg.has_option("assimilation", "theta0"):
        overrides["theta0_policy"] = cfg.get("assimilation", "theta0")
    return scenario.with_overrides(**overrides) if overrides else scenario


def _solvers(cfg):
    if not cfg.has_section("solver"):
        return None
    rel = cfg.getfloat("solver", "rel_tol", fallback=1e-12)
    maxit = cfg.getint("solver", "max_iter", fallback=0) or None
    return {
        "pressure": SolverConfig(method="cg", rel_tol=rel, max_iter=maxit,
                                 preconditioner="jacobi"),
        "transport": SolverConfig(method="bicgstab", rel_tol=rel,
                                  max_iter=maxit, preconditioner="jacobi"),
    }


def output_dir(cfg):
    root = Path(os.environ.get("POROUSDA_OUTPUT_ROOT", "."))
    sub = cfg.get("output", "dir", fallback=None) if cfg.has_section("output") else None
    return root / sub if sub else root


def write_raster(path, values, lengths):
    """Field snapshot in the raster container: `nx ny Lx Ly` then rows."""
    values = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{values.shape[1]} {values.shape[0]} "
                 f"{lengths[0]!r} {lengths[1]!r}\n")
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _write_snapshots(outdir, scenario, trajectory, times):
    mesh = trajectory.mesh
    for t in times:
        field = trajectory.at(t)
        grid_vals = field.values.reshape(mesh.ny + 1, mesh.nx + 1)
        write_raster(outdir / f"theta_t{t:g}.raster", grid_vals,
                     scenario.lengths)


def _write_report(outdir, run, mu):
    report = run.report
    lines = [f"mu = {mu!r}"]
    lines.append(f"plateau R_percent = {report.plateau_value()!r} "
                 f"(from t = {report.fit_window()[1]!r})")
    lines.append(f"final R_percent = {report.asymptote()!r}")
    try:
        fit = driver.fit_decay_rate(report)
        lines.append(f"fitted decay rate = {fit.rate!r} over t in "
                     f"{fit.window} (R^2 = {fit.r_squared!r})")
    except ValueError as exc:
        lines.append(f"fitted decay rate unavailable: {exc}")
    lines.append(f"max flux conservation residual = {report.conservation_max!r}")
    lines.append(f"range violation = {report.range_violation()!r}")
    lines.append("post-measurement improvement fraction = "
                 f"{report.post_update_improvement_fraction()!r}")
    for kind, counts in report.solver_iterations.items():
        if counts:
            lines.append(f"{kind} solver iterations: max {max(counts)}, "
                         f"total {sum(counts)}")
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")


def cmd_run(cfg):
    scenario = build_scenario(cfg)
    solvers = _solvers(cfg)
    outroot = output_dir(cfg)
    outroot.mkdir(parents=True, exist_ok=True)

    mu_values = (_floats(cfg.get("assimilation", "mu"))
                 if cfg.has_option("assimilation", "mu") else [scenario.mu])
    snapshot_times = (_floats(cfg.get("output", "snapshots"))
                      if cfg.has_option("output", "snapshots")
                      else list(scenario.snapshot_times))

    mesh = scenario.build_mesh()
    partition = driver.TimePartition.from_scenario(scenario)
    print(f"{scenario.name}: {scenario.nx}x{scenario.ny} mesh, "
          f"{partition.n_coarse} coarse steps of {scenario.fine_per_coarse} "
          f"fine steps, spacing {scenario.spacing!r}")

    ref = driver.run_reference(scenario, partition, mesh, solvers=solvers)
    if cfg.getboolean("output", "reference", fallback=True):
        ref.report.write_csv(outroot / "reference_metrics.csv")

    failures = 0
    for mu in mu_values:
        rundir = outroot / f"mu_{mu:g}" if len(mu_values) > 1 else outroot
        rundir.mkdir(parents=True, exist_ok=True)
        try:
            run = driver.run_assimilated(scenario, ref.stream, partition, mesh,
                                         mu=mu, reference=ref.trajectory,
                                         solvers=solvers)
        except (NoConvergenceError, ValueError) as exc:
            failures += 1
            (rundir / "report.txt").write_text(f"run failed: {exc}\n")
            print(f"mu={mu:g}: FAILED ({exc})", file=sys.stderr)
            continue
        run.report.write_csv(rundir / "metrics.csv")
        _write_report(rundir, run, mu)
        if snapshot_times:
            _write_snapshots(rundir, scenario, run.trajectory, snapshot_times)
        print(f"mu={mu:g}: final R = {run.report.asymptote():.6g}%, "
              f"plateau R = {run.report.plateau_value():.6g}%")
    return 1 if failures else 0


def _estimate_c0(mesh, grid, lengths):
    """Interpolation constant from the smooth probe, first-order form."""
    Lx, Ly = lengths
    u = NodalField.from_callable(
        mesh, lambda x, y: np.sin(np.pi * x / Lx) * np.sin(np.pi * y / Ly))
    err = l2_diff(grid.interpolate(u), u)
    quad = quadrature(mesh)
    g = np.einsum("pcd,ec->epd", quad.dphi, u.corner_values())
    seminorm = float(np.sqrt(np.sum(g * g) * quad.weight))
    return err / (grid.spacing * seminorm)


def cmd_validate(cfg):
    scenario = build_scenario(cfg)
    print(f"scenario {scenario.name}")
    report = scenarios.assumption_report(scenario)
    for key in scenarios.ASSUMPTION_KEYS:
        holds, note = report[key]
        print(f"  {key}: {'pass' if holds else 'warn'} ({note})")

    mesh = scenario.build_mesh()
    try:
        grid = SparseGrid(mesh, scenario.spacing, kind=scenario.observation_kind)
        print(f"  alignment: pass (spacing {scenario.spacing!r} = "
              f"{grid.kx} x {grid.ky} cells)")
    except AlignmentError as exc:
        print(f"  alignment: warn ({exc})")
        return 0

    c0 = _estimate_c0(mesh, grid, scenario.lengths)
    xs = np.linspace(0.0, scenario.lengths[0], 201)
    ys = np.linspace(0.0, scenario.lengths[1], 201)
    X, Y = np.meshgrid(xs, ys)
    d_star = float(np.min(scenario.diffusion(X, Y)))
    proxy = scenario.mu * c0**2 * scenario.spacing**2
    verdict = "pass" if proxy < d_star else "warn"
    print(f"  stability proxy: {verdict} (mu*c0^2*spacing^2 = {proxy:.6g} "
          f"vs min diffusion {d_star:.6g}, c0 = {c0:.6g})")
    return 0


def cmd_sweep(cfg):
    scenario = build_scenario(cfg)
    solvers = _solvers(cfg)
    mu_values = (_floats(cfg.get("sweep", "mu"))
                 if cfg.has_option("sweep", "mu") else [scenario.mu])
    spacings = (_floats(cfg.get("sweep", "spacing"))
                if cfg.has_option("sweep", "spacing") else [scenario.spacing])
    outroot = output_dir(cfg)
    outroot.mkdir(parents=True, exist_ok=True)

    rows = driver.parameter_sweep(scenario, mu_values, spacings,
                                  solvers=solvers)
    driver.sweep_csv(rows, outroot / "sweep.csv")
    failures = sum(1 for row in rows if row[4] != "ok")
    for mu, spacing, plateau, rate, status in rows:
        print(f"mu={mu:g} spacing={spacing:g}: plateau R = {plateau:.6g}%, "
              f"rate = {rate:.6g} [{status}]")
    return 1 if failures else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="porousda",
        description="Nudging-based data assimilation runs for miscible "
                    "displacement in porous media.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("validate", cmd_validate),
                     ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("config", help="INI run configuration")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.fn(cfg)
    except (FileNotFoundError, ValueError, KeyError,
            configparser.Error, AlignmentError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
