import io

import numpy as np
import pytest

from porousda import driver, scenarios
from porousda.driver import (METRIC_COLUMNS, RunReport, TimePartition,
                             fit_decay_rate, parameter_sweep, run_assimilated,
                             run_reference, sweep_csv)


@pytest.fixture(scope="module")
def tiny_ex1():
    sc = scenarios.example1(nx=20)
    mesh = sc.build_mesh()
    part = TimePartition.from_scenario(sc, t_end=0.04)
    ref = run_reference(sc, part, mesh)
    return sc, mesh, part, ref


def test_partition_layout():
    part = TimePartition.uniform(t_end=1.0, n_coarse=4, fine_per_coarse=5)
    assert part.n_coarse == 4
    assert len(part.coarse_times) == 5
    assert part.coarse_times[1] - part.coarse_times[0] == pytest.approx(0.25)
    fine = part.fine_times(0)
    assert fine[0] == 0.0 and fine[-1] == pytest.approx(0.25)
    assert len(fine) == 6
    assert len(part.all_times()) == 21


def test_partition_rejects_ragged_horizon():
    sc = scenarios.example1(nx=10)       # coarse step 0.02
    with pytest.raises(ValueError):
        TimePartition.from_scenario(sc, t_end=0.03)


def test_fit_recovers_known_decay():
    t = np.linspace(0.0, 1.0, 21)
    fit = fit_decay_rate(t, 7.0 * np.exp(-2.0 * t))
    assert fit.rate == pytest.approx(-2.0, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_constant_series():
    t = np.linspace(0.0, 1.0, 5)
    fit = fit_decay_rate(t, np.full(5, 3.3))
    assert fit.rate == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == 1.0


def test_fit_input_validation():
    with pytest.raises(ValueError):
        fit_decay_rate(np.array([0.0, 1.0]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        fit_decay_rate(np.linspace(0, 1, 5), np.array([1, 1, 0, 1, 1.0]))


def test_reference_run_zero_forcing_stays_zero():
    sc = scenarios.example1(nx=10).with_overrides(
        initial=lambda x, y: 0.0 * x,
        source=lambda x, y, t: 0.0 * x,
        exact=None)
    mesh = sc.build_mesh()
    part = TimePartition.from_scenario(sc, t_end=0.04)
    ref = run_reference(sc, part, mesh)
    for t in part.coarse_times:
        np.testing.assert_allclose(ref.trajectory.at(t).values, 0.0,
                                   atol=1e-12)


def test_r_starts_at_exactly_100_with_zero_guess(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    run = run_assimilated(sc, ref.stream, part, mesh, mu=10.0)
    assert run.report.r_percent[0] == 100.0


def test_rtilde_starts_at_exactly_zero_with_interpolant_guess(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    run = run_assimilated(sc, ref.stream, part, mesh, mu=10.0,
                          theta0_policy="interpolant",
                          reference=ref.trajectory)
    assert run.report.rows[0][2] == 0.0


def test_mu_zero_matches_reference_bitwise(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    run = run_assimilated(sc, ref.stream, part, mesh, mu=0.0,
                          theta0_policy="true", reference=ref.trajectory)
    for t in part.coarse_times:
        assert np.array_equal(run.trajectory.at(t).values,
                              ref.trajectory.at(t).values)


def test_repeated_runs_are_bitwise_deterministic(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    a = run_assimilated(sc, ref.stream, part, mesh, mu=25.0)
    b = run_assimilated(sc, ref.stream, part, mesh, mu=25.0)
    assert np.array_equal(a.trajectory.final().values,
                          b.trajectory.final().values)
    assert np.array_equal(np.asarray(a.report.rows), np.asarray(b.report.rows),
                          equal_nan=True)


def test_free_run_keeps_large_error_at_short_horizon(tiny_ex1):
    """Without relaxation the initial 100% discrepancy cannot vanish within
    one coarse window; it only shrinks by the flow's own decay."""
    sc, mesh, part, ref = tiny_ex1
    short = TimePartition.from_scenario(sc, t_end=0.02)
    run = run_assimilated(sc, ref.stream, short, mesh, mu=0.0)
    assert run.report.asymptote() > 30.0


def test_assimilated_beats_free_run(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    free = run_assimilated(sc, ref.stream, part, mesh, mu=0.0)
    nudged = run_assimilated(sc, ref.stream, part, mesh, mu=100.0)
    assert nudged.report.asymptote() < free.report.asymptote()


def test_unknown_policy_rejected(tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    with pytest.raises(ValueError):
        run_assimilated(sc, ref.stream, part, mesh, mu=1.0,
                        theta0_policy="oracle")


def test_interpolant_policy_needs_observations(tiny_ex1):
    sc, mesh, part, _ = tiny_ex1
    with pytest.raises(ValueError):
        run_assimilated(sc, None, part, mesh, mu=0.0,
                        theta0_policy="interpolant")


def test_trajectory_lookup_tolerance(tiny_ex1):
    _, _, part, ref = tiny_ex1
    t = part.coarse_times[1]
    assert np.array_equal(ref.trajectory.at(t + 5e-10).values,
                          ref.trajectory.at(t).values)
    with pytest.raises(KeyError):
        ref.trajectory.at(t + 0.001)


def test_metrics_csv_round_trip(tmp_path, tiny_ex1):
    sc, mesh, part, ref = tiny_ex1
    run = run_assimilated(sc, ref.stream, part, mesh, mu=10.0)
    path = tmp_path / "metrics.csv"
    run.report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    parsed = np.array([[float(v) for v in line.split(",")]
                       for line in lines[1:]])
    np.testing.assert_array_equal(parsed[:, 0], run.report.times)
    np.testing.assert_array_equal(parsed[:, 1], run.report.r_percent)
    assert len(lines) == 1 + len(run.report.rows)


def test_sweep_rows_sorted_and_complete():
    sc = scenarios.example1(nx=10, t_end=0.04)
    rows = parameter_sweep(sc, mu_values=[10.0, 0.0], spacings=[0.5, 0.1])
    assert [(r[1], r[0]) for r in rows] == [(0.1, 0.0), (0.1, 10.0),
                                            (0.5, 0.0), (0.5, 10.0)]
    assert all(r[4] == "ok" for r in rows)


def test_sweep_records_failures_instead_of_raising():
    sc = scenarios.example1(nx=10, t_end=0.04)
    rows = parameter_sweep(sc, mu_values=[1.0], spacings=[0.1, 0.15])
    status = {r[1]: r[4] for r in rows}
    assert status[0.1] == "ok"
    assert status[0.15].startswith("failed:")


def test_sweep_csv_format():
    rows = [(1.0, 0.1, 2.5, -3.0, "ok")]
    buf = io.StringIO()
    sweep_csv(rows, buf)
    text = buf.getvalue().splitlines()
    assert text[0] == "mu,spacing,plateau_R_percent,rate,status"
    assert text[1].endswith(",ok")
