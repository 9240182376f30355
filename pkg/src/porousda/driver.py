"""Coarse/fine time marching, twin experiments, and error metrics.

One marching core serves both the reference run and the assimilated run: per
coarse interval the transport velocity is frozen (from the pressure solve and
conservative flux recovery, from a prescribed closure, or absent), then the
fine steps advance the concentration.  With relaxation off the data stream is
never touched, so a reference run and a zero-strength assimilated run from
the same initial data produce identical floating-point trajectories.

Metrics follow the twin-experiment convention: R is the percent relative
l2 difference against the comparator (analytic solution when known, else the
reference trajectory), Rtilde compares against the coarse interpolant of the
comparator, so a reference run's Rtilde column doubles as the interpolation
quality of the sparse data themselves.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import transport
from .fields import NodalField, l2_diff, l2_norm
from .flux_postprocess import postprocess_flux
from .linalg import NoConvergenceError, SolverConfig
from .observation import ObservationStream, SparseGrid
from .pressure import PressureProblem, solve_pressure

METRIC_COLUMNS = ("t", "R_percent", "Rtilde_percent", "mass_residual",
                  "range_min", "range_max")


@dataclass(frozen=True)
class TimePartition:
    """Nested uniform partition: coarse measurement times, m fine substeps."""

    coarse_times: tuple
    fine_per_coarse: int

    def __post_init__(self):
        ct = np.asarray(self.coarse_times, dtype=float)
        if ct.size < 2 or np.any(np.diff(ct) <= 0):
            raise ValueError("coarse times must be strictly increasing")
        if self.fine_per_coarse < 1:
            raise ValueError("need at least one fine step per coarse interval")

    @classmethod
    def uniform(cls, t_end, n_coarse, fine_per_coarse, t_start=0.0):
        if t_end <= t_start:
            raise ValueError("empty time span")
        return cls(tuple(np.linspace(t_start, t_end, n_coarse + 1)),
                   fine_per_coarse)

    @classmethod
    def from_scenario(cls, scenario, t_end=None):
        t_end = scenario.t_end if t_end is None else t_end
        n = round(t_end / scenario.coarse_dt)
        if n < 1 or abs(n * scenario.coarse_dt - t_end) > 1e-9 * max(1.0, t_end):
            raise ValueError(
                f"span {t_end} is not a whole number of coarse steps "
                f"of {scenario.coarse_dt}")
        return cls.uniform(t_end, n, scenario.fine_per_coarse)

    @property
    def n_coarse(self):
        return len(self.coarse_times) - 1

    def fine_times(self, n):
        """Times of the n-th coarse interval, endpoints included."""
        return np.linspace(self.coarse_times[n], self.coarse_times[n + 1],
                           self.fine_per_coarse + 1)

    def all_times(self):
        """Every fine level once, coarse endpoints not duplicated."""
        out = [self.coarse_times[0]]
        for n in range(self.n_coarse):
            out.extend(self.fine_times(n)[1:])
        return np.array(out)


class Trajectory:
    """Dense record of nodal concentration values over the fine levels."""

    def __init__(self, mesh, times, values):
        self.mesh = mesh
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def __len__(self):
        return self.times.size

    def field(self, i):
        return NodalField(self.mesh, self.values[i])

    def at(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no trajectory sample at t={t}")
        return self.field(i)

    def final(self):
        return self.field(len(self) - 1)


class RunReport:
    """Per-fine-step metric table plus run-level diagnostics."""

    def __init__(self, partition):
        self.partition = partition
        self.rows = []
        self.solver_iterations = {"pressure": [], "transport": []}
        self.conservation_max = 0.0

    def append(self, t, r, rtilde, mass_residual, rmin, rmax):
        self.rows.append((t, r, rtilde, mass_residual, rmin, rmax))

    def column(self, name):
        i = METRIC_COLUMNS.index(name)
        return np.array([row[i] for row in self.rows])

    @property
    def times(self):
        return self.column("t")

    @property
    def r_percent(self):
        return self.column("R_percent")

    @property
    def rtilde_percent(self):
        return self.column("Rtilde_percent")

    def range_violation(self):
        lo = self.column("range_min")
        hi = self.column("range_max")
        # + 0.0 turns a -0.0 (negated zero excursion) into plain 0.0
        return 0.0 + max(float(np.max(-lo, initial=0.0)),
                         float(np.max(hi - 1.0, initial=0.0)))

    def plateau_start(self, rel_change=0.05):
        """First sample index after which R never moves more than rel_change."""
        r = self.r_percent
        if r.size < 2:
            return 0
        steps = np.abs(np.diff(r)) > rel_change * np.maximum(np.abs(r[:-1]), 1e-300)
        moving = np.flatnonzero(steps)
        return 0 if moving.size == 0 else int(moving[-1]) + 1

    def plateau_value(self, rel_change=0.05):
        return float(np.mean(self.r_percent[self.plateau_start(rel_change):]))

    def asymptote(self):
        return float(self.r_percent[-1])

    def fit_window(self, rel_change=0.05):
        t = self.times
        return (float(t[0]), float(t[self.plateau_start(rel_change)]))

    def post_update_improvement_fraction(self):
        """Share of coarse measurement times where the next fine step lowers R.

        Compares R one fine step after each interior coarse time against R at
        that coarse time; this is where a fresh measurement and velocity first
        act.
        """
        m = self.partition.fine_per_coarse
        r = self.r_percent
        idx = np.arange(m, r.size - 1, m)
        if idx.size == 0:
            return float("nan")
        return float(np.mean(r[idx + 1] <= r[idx]))

    def write_csv(self, path_or_handle):
        if hasattr(path_or_handle, "write"):
            self._write(path_or_handle)
        else:
            with open(path_or_handle, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow([repr(float(v)) for v in row])

    def to_csv_text(self):
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()


@dataclass
class ReferenceRun:
    trajectory: Trajectory
    stream: ObservationStream
    report: RunReport


@dataclass
class AssimilationRun:
    trajectory: Trajectory
    report: RunReport


def _solver_configs(overrides=None):
    cfg = {
        "pressure": SolverConfig(method="cg", rel_tol=1e-12, preconditioner="jacobi"),
        "transport": SolverConfig(method="bicgstab", rel_tol=1e-12,
                                  preconditioner="jacobi"),
    }
    if overrides:
        cfg.update(overrides)
    return cfg


class _Comparator:
    """Evaluates R and Rtilde rows against analytic or trajectory truth."""

    def __init__(self, scenario, grid, reference=None):
        self.exact = scenario.exact
        self.reference = reference
        self.grid = grid

    def target(self, t):
        if self.reference is not None:
            return self.reference.at(t)
        if self.exact is not None:
            fn = self.exact
            return lambda x, y: fn(x, y, t)
        return None

    def metrics(self, theta, t):
        target = self.target(t)
        if target is None:
            return float("nan"), float("nan")
        denom = (l2_norm(target) if isinstance(target, NodalField)
                 else _callable_norm(theta.mesh, target))
        if denom == 0.0:
            return float("nan"), float("nan")
        r = 100.0 * (l2_diff(theta, target) / denom)
        if self.grid is None:
            return r, float("nan")
        coarse = self.grid.interpolate(target)
        rtilde = 100.0 * (l2_diff(theta, coarse) / denom)
        return r, rtilde


def _callable_norm(mesh, fn):
    from .fields import l2_norm_callable
    return l2_norm_callable(mesh, fn)


def _march(scenario, partition, mesh, theta0_values, mu, stream, grid,
           comparator, solvers):
    """Shared coarse/fine marching core; returns (Trajectory, RunReport)."""
    coeffs = transport.TransportCoefficients(
        mesh,
        diffusion=scenario.diffusion,
        reaction=scenario.reaction,
        source=scenario.source,
        mu=mu,
        grid=grid if mu > 0.0 else None,
        dirichlet=scenario.theta_dirichlet,
    )
    needs_pressure = scenario.kappa is not None
    problem = None
    if needs_pressure:
        problem = PressureProblem(mesh, scenario.kappa,
                                  scenario.pressure_source or (lambda x, y: np.zeros_like(np.asarray(x, dtype=float))),
                                  dirichlet=scenario.pressure_dirichlet,
                                  solver=solvers["pressure"])

    report = RunReport(partition)
    theta = NodalField(mesh, np.array(theta0_values, dtype=float))
    times = [partition.coarse_times[0]]
    values = [theta.values.copy()]

    def record(t, mass_residual):
        r, rtilde = comparator.metrics(theta, t)
        report.append(t, r, rtilde, mass_residual,
                      float(theta.values.min()), float(theta.values.max()))

    record(times[0], float("nan"))

    frozen = None
    pressure_guess = None
    for n in range(partition.n_coarse):
        if scenario.velocity is not None:
            outflux = transport.prescribed_outflux(mesh, scenario.velocity, theta)
            mass_residual = float("nan")
        elif needs_pressure:
            if frozen is not None and scenario.static_velocity:
                outflux, mass_residual = frozen
            else:
                pressure, prep = solve_pressure(problem, theta,
                                                x0=pressure_guess)
                pressure_guess = pressure.values
                report.solver_iterations["pressure"].append(prep.iterations)
                flux = postprocess_flux(problem, pressure, theta)
                outflux = flux.segment_outflux
                mass_residual = flux.max_residual
                report.conservation_max = max(report.conservation_max,
                                              mass_residual)
                frozen = (outflux, mass_residual)
        else:
            outflux, mass_residual = None, float("nan")

        coeffs_n = coeffs.with_velocity(outflux) if outflux is not None else coeffs
        fine = partition.fine_times(n)
        for s0, s1 in zip(fine[:-1], fine[1:]):
            theta, rep = transport.step(theta, coeffs_n,
                                        transport.TransportStep(s0, s1),
                                        observations=stream,
                                        solver=solvers["transport"])
            report.solver_iterations["transport"].append(rep.iterations)
            times.append(s1)
            values.append(theta.values.copy())
            record(s1, mass_residual)

    return Trajectory(mesh, np.array(times), np.array(values)), report


def run_reference(scenario, partition=None, mesh=None, solvers=None):
    """Advance the plain scheme from the scenario's true initial condition.

    Returns the trajectory, an observation stream sampled at every coarse
    time, and the metric report (R measured against the analytic solution
    when the scenario has one; Rtilde doubles as interpolation quality).
    """
    partition = partition or TimePartition.from_scenario(scenario)
    mesh = mesh or scenario.build_mesh()
    grid = SparseGrid(mesh, scenario.spacing, kind=scenario.observation_kind)
    solvers = _solver_configs(solvers)
    theta0 = NodalField.from_callable(mesh, scenario.initial).values
    comparator = _Comparator(scenario, grid)
    traj, report = _march(scenario, partition, mesh, theta0, 0.0, None, grid,
                          comparator, solvers)
    records = [(t, grid.sample(traj.at(t))) for t in partition.coarse_times]
    stream = ObservationStream([t for t, _ in records],
                               np.array([d for _, d in records]))
    return ReferenceRun(traj, stream, report)


def initial_guess(scenario, mesh, grid, stream, policy=None):
    """Starting concentration per policy: zero, interpolant, or true."""
    policy = policy or scenario.theta0_policy
    if policy == "zero":
        return np.zeros(mesh.n_vertices)
    if policy == "interpolant":
        if stream is None:
            raise ValueError("interpolant start requires observations")
        t0 = stream.times[0]
        return grid.reconstruct(stream.interpolate(t0)).values
    if policy == "true":
        return NodalField.from_callable(mesh, scenario.initial).values
    raise ValueError(f"unknown initial policy {policy!r}")


def run_assimilated(scenario, stream, partition=None, mesh=None, mu=None,
                    theta0_policy=None, reference=None, solvers=None):
    """Nudged run driven by an observation stream.

    `reference` may be a Trajectory for twin-experiment metrics; otherwise the
    scenario's analytic solution is used when present.  With mu = 0 the data
    stream is ignored entirely and the marching reduces to the plain scheme.
    """
    partition = partition or TimePartition.from_scenario(scenario)
    mesh = mesh or scenario.build_mesh()
    mu = scenario.mu if mu is None else float(mu)
    grid = SparseGrid(mesh, scenario.spacing, kind=scenario.observation_kind)
    solvers = _solver_configs(solvers)
    theta0 = initial_guess(scenario, mesh, grid, stream, theta0_policy)
    comparator = _Comparator(scenario, grid, reference=reference)
    traj, report = _march(scenario, partition, mesh, theta0, mu, stream, grid,
                          comparator, solvers)
    return AssimilationRun(traj, report)


@dataclass
class FitResult:
    rate: float
    intercept: float
    r_squared: float
    window: tuple


def fit_decay_rate(times, values=None, window=None):
    """Least-squares slope of log R against t.

    Accepts a RunReport or explicit (times, values).  Needs at least three
    strictly positive samples inside the window.
    """
    if values is None:
        report = times
        times, values = report.times, report.r_percent
        if window is None:
            window = report.fit_window()
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is not None:
        keep = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
        times, values = times[keep], values[keep]
    else:
        window = (float(times[0]), float(times[-1])) if times.size else (0.0, 0.0)
    if times.size < 3:
        raise ValueError("need at least three samples to fit a rate")
    if np.any(values <= 0.0):
        raise ValueError("decay fit requires positive values")
    logv = np.log(values)
    slope, intercept = np.polyfit(times, logv, 1)
    resid = logv - (slope * times + intercept)
    total = logv - logv.mean()
    ss_tot = float(total @ total)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return FitResult(float(slope), float(intercept), r2,
                     (float(times[0]), float(times[-1])))


SWEEP_COLUMNS = ("mu", "spacing", "plateau_R_percent", "rate", "status")


def parameter_sweep(scenario, mu_values=None, spacings=None, partition=None,
                    solvers=None):
    """Independent assimilated runs over mu and observation-spacing grids.

    One reference run is shared per spacing.  Rows come back sorted by
    (spacing, mu); failed runs are recorded, not raised.
    """
    mu_values = sorted(set(mu_values if mu_values is not None else [scenario.mu]))
    spacings = sorted(set(spacings if spacings is not None else [scenario.spacing]))
    rows = []
    for spacing in spacings:
        sc = scenario.with_overrides(spacing=spacing)
        mesh = sc.build_mesh()
        part = partition or TimePartition.from_scenario(sc)
        try:
            ref = run_reference(sc, part, mesh, solvers=solvers)
        except (NoConvergenceError, ValueError) as exc:
            for mu in mu_values:
                rows.append((mu, spacing, float("nan"), float("nan"),
                             f"failed: {exc}"))
            continue
        for mu in mu_values:
            try:
                run = run_assimilated(sc, ref.stream, part, mesh, mu=mu,
                                      reference=ref.trajectory,
                                      solvers=solvers)
                try:
                    rate = fit_decay_rate(run.report).rate
                except ValueError:
                    rate = float("nan")
                rows.append((mu, spacing, run.report.plateau_value(), rate, "ok"))
            except (NoConvergenceError, ValueError) as exc:
                rows.append((mu, spacing, float("nan"), float("nan"),
                             f"failed: {exc}"))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def sweep_csv(rows, path_or_handle):
    def write(fh):
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for mu, spacing, plateau, rate, status in rows:
            writer.writerow([repr(float(mu)), repr(float(spacing)),
                             repr(float(plateau)), repr(float(rate)), status])

    if hasattr(path_or_handle, "write"):
        write(path_or_handle)
    else:
        with open(path_or_handle, "w", newline="") as fh:
            write(fh)
