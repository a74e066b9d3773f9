"""Ensemble aggregation, timing-records, and CSV round-trip tests."""

import math

import numpy as np
import pytest

from rbsgd.bench import (
    EnsembleRunError,
    SolverSpec,
    TimingRecord,
    read_bounds_csv,
    read_ensemble_csv,
    read_timing_csv,
    read_trajectories_csv,
    run_ensemble,
    run_with_spec,
    sweep_constraints,
    time_to_tolerance,
    write_barrier_shape_csv,
    write_bounds_csv,
    write_ensemble_csv,
    write_timing_csv,
    write_trajectories_csv,
    write_trajectory2d_csv,
)
from rbsgd.problem import generate_ellipsoid_problem
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule
from rbsgd.solvers import Anchors, solve_central_point
from rbsgd.theory import BoundCheck

SPEC = SolverSpec(
    algorithm="sgd",
    gamma=PowerLawSchedule(0.1, 0.8),
    barrier=BarrierSchedule(1e-4, PowerLawSchedule(1.0, 0.3)),
    budget=400,
)


@pytest.fixture(scope="module")
def setup():
    problem = generate_ellipsoid_problem(d=6, m=25, n=4, seed=11, target_norm=4.0)
    x_star = solve_central_point(problem, 1e-4, grad_tol=1e-11)
    x_c = solve_central_point(problem, 1e-9, grad_tol=1e-11)
    return problem, Anchors(x_star=x_star, x_c=x_c), x_c


class TestEnsemble:
    def test_single_run_zero_std(self, setup):
        problem, anchors, _ = setup
        stats, trajectories = run_ensemble(problem, SPEC, 1, 7, anchors)
        assert stats.runs == 1
        assert np.all(stats.std_err == 0.0)
        assert len(trajectories) == 1

    def test_same_master_seed_identical(self, setup):
        problem, anchors, _ = setup
        a, _ = run_ensemble(problem, SPEC, 5, 7, anchors)
        b, _ = run_ensemble(problem, SPEC, 5, 7, anchors)
        np.testing.assert_array_equal(a.mean_err, b.mean_err)
        np.testing.assert_array_equal(a.std_err, b.std_err)
        assert a.config_hash == b.config_hash
        c, _ = run_ensemble(problem, SPEC, 5, 8, anchors)
        assert not np.array_equal(a.mean_err, c.mean_err)
        assert a.config_hash != c.config_hash

    def test_worker_count_invariance(self, setup):
        problem, anchors, _ = setup
        serial, _ = run_ensemble(problem, SPEC, 4, 3, anchors)
        parallel, _ = run_ensemble(problem, SPEC, 4, 3, anchors, workers=2)
        np.testing.assert_array_equal(serial.mean_err, parallel.mean_err)
        np.testing.assert_array_equal(serial.mean_violation, parallel.mean_violation)

    def test_stop_observation_collects_k_tau(self, setup):
        problem, anchors, x_c = setup
        stats, trajectories = run_ensemble(
            problem, SPEC, 3, 5, anchors, x_stop_ref=x_c, record_at=[123]
        )
        assert len(stats.k_tau) == 3
        assert all(t.terminal.reason == "budget" for t in trajectories)
        assert 123 in list(stats.ks)

    def test_aborted_run_names_run_id(self, setup):
        problem, anchors, _ = setup
        exploding = SolverSpec(
            algorithm="sgd",
            gamma=PowerLawSchedule(1e200, 0.0),
            barrier=SPEC.barrier,
            budget=50,
            force=True,
        )
        with pytest.raises(EnsembleRunError) as exc:
            run_ensemble(problem, exploding, 2, 7, anchors)
        assert exc.value.run_id == 0

    def test_requires_anchor(self, setup):
        problem, _, _ = setup
        with pytest.raises(ValueError):
            run_ensemble(problem, SPEC, 2, 7, Anchors())


class TestTiming:
    def test_converged_record(self, setup):
        problem, _, x_c = setup
        spec = SolverSpec(algorithm="gd", barrier=SPEC.barrier, step=1e-2, budget=20_000,
                          stop_tol=0.05, stop_stride=5)
        record = time_to_tolerance(problem, spec, x_c, seed=3)
        assert record.converged
        assert record.k_tau <= spec.budget
        assert record.wall_seconds > 0
        assert record.m == problem.m
        assert record.algorithm == "gd"

    def test_unconverged_flag(self, setup):
        problem, _, x_c = setup
        spec = SolverSpec(algorithm="sgd", gamma=SPEC.gamma, barrier=SPEC.barrier, budget=20,
                          stop_tol=1e-9)
        record = time_to_tolerance(problem, spec, x_c, seed=3)
        assert not record.converged
        assert record.k_tau == 20

    def test_k_tau_deterministic_across_repeats(self, setup):
        problem, _, x_c = setup
        spec = SolverSpec(algorithm="sgd", gamma=SPEC.gamma, barrier=SPEC.barrier,
                          budget=5000, stop_tol=0.2, stop_stride=1)
        a = time_to_tolerance(problem, spec, x_c, seed=4)
        b = time_to_tolerance(problem, spec, x_c, seed=4)
        assert a.k_tau == b.k_tau
        assert a.converged and b.converged

    def test_sweep_shape_and_order(self):
        spec = SolverSpec(
            algorithm="sgd",
            gamma=PowerLawSchedule(0.1, 0.8),
            barrier=BarrierSchedule(1e-4, PowerLawSchedule(1.0, 0.3)),
            budget=2000,
            stop_tol=0.5,
        )
        records = sweep_constraints(
            [10, 30],
            ["sgd", "gd"],
            spec,
            d=5,
            n=2,
            problem_seed=3,
            run_seeds=(0, 1),
            generator_kwargs={"target_norm": 3.0},
        )
        assert len(records) == 2 * 2 * 2
        assert [r.m for r in records] == [10, 10, 10, 10, 30, 30, 30, 30]
        with pytest.raises(ValueError):
            sweep_constraints([30, 10], ["sgd"], spec)


class TestCsvRoundTrip:
    def test_trajectories(self, setup, tmp_path):
        problem, anchors, _ = setup
        _, trajectories = run_ensemble(problem, SPEC, 2, 7, anchors)
        path = tmp_path / "trajectories.csv"
        write_trajectories_csv(path, trajectories)
        rows = read_trajectories_csv(path)
        assert len(rows) == sum(len(t.records) for t in trajectories)
        flat = [(t.run_id, r) for t in trajectories for r in t.records]
        for row, (run_id, rec) in zip(rows, flat):
            assert row["run_id"] == run_id and row["k"] == rec.k
            assert row["err_to_xstar"] == rec.err_to_xstar
            assert row["objective"] == rec.objective
            assert row["wall_ns"] == rec.wall_ns

    def test_trajectories_nan_columns(self, setup, tmp_path):
        problem, _, _ = setup
        trajectory = run_with_spec(problem, SPEC, seed=1)  # no anchors: nan errors
        path = tmp_path / "trajectories.csv"
        write_trajectories_csv(path, [trajectory])
        rows = read_trajectories_csv(path)
        assert all(math.isnan(row["err_to_xstar"]) for row in rows)

    def test_ensemble(self, setup, tmp_path):
        problem, anchors, _ = setup
        stats, _ = run_ensemble(problem, SPEC, 3, 1, anchors)
        path = tmp_path / "ensemble.csv"
        write_ensemble_csv(path, stats)
        rows = read_ensemble_csv(path)
        assert [row["k"] for row in rows] == list(stats.ks)
        assert [row["mean_err"] for row in rows] == list(stats.mean_err)
        assert all(row["runs"] == 3 for row in rows)

    def test_timing(self, tmp_path):
        records = [
            TimingRecord("sgd", 100, 0, 1234, 0.25, True),
            TimingRecord("gd", 100000, 3, 20000, 12.5, False),
        ]
        path = tmp_path / "timing.csv"
        write_timing_csv(path, records)
        assert read_timing_csv(path) == records

    def test_bounds_with_and_without_k(self, tmp_path):
        checks = [
            BoundCheck("c_norm", 1.0, 2.0, True, k=17),
            BoundCheck("phi_sq", 3.5, 3.5, True, k=None),
            BoundCheck("descent", 5.0, 4.0, False, k=3),
        ]
        path = tmp_path / "bounds.csv"
        write_bounds_csv(path, checks)
        rows = read_bounds_csv(path)
        assert rows[0]["k"] == 17 and rows[1]["k"] is None
        assert rows[1]["margin"] == 0.0
        assert [row["holds"] for row in rows] == [True, True, False]

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            read_timing_csv(path)

    def test_trajectory2d(self, setup, tmp_path):
        problem, _, _ = setup
        t = run_with_spec(problem, SPEC, seed=2, snapshot_dims=(0, 1))
        path = tmp_path / "trajectory2d.csv"
        write_trajectory2d_csv(path, [("fast-gap", t)])
        text = path.read_text().splitlines()
        assert text[0] == "run_id,k,x1,x2,label"
        assert len(text) == 1 + len(t.records)
        plain = run_with_spec(problem, SPEC, seed=2)
        with pytest.raises(ValueError, match="snapshot"):
            write_trajectory2d_csv(path, [("x", plain)])

    def test_barrier_shape(self, tmp_path):
        path = tmp_path / "barrier.csv"
        z = np.linspace(-3, 1, 41)
        write_barrier_shape_csv(path, z, [1.0, 1e-2, 1e-6])
        lines = path.read_text().splitlines()
        assert lines[0] == "z,delta,value"
        assert len(lines) == 1 + 3 * 41


class TestSolverSpec:
    def test_rejects_unknown_algorithm(self):
        with pytest.raises(ValueError):
            SolverSpec(algorithm="newton")

    def test_describe_mentions_all_knobs(self):
        text = SPEC.describe()
        for token in ("sgd", "gamma", "eps", "delta_inf", "budget"):
            assert token in text
