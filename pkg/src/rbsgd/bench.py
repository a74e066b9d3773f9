"""Ensemble runner, timing harness, and CSV persistence.

Ensembles fan one solver configuration out over many derived seeds and
aggregate the error curve on a shared recording grid.  Timing runs measure
wall time to the stop rule for one algorithm at a time on a single worker
(after a discarded warm-up run), so wall-clock comparisons across
algorithms and constraint counts are fair.  All artifacts round-trip
through fixed-header CSV files.
"""

from __future__ import annotations

import csv
import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from rbsgd.problem import Problem, generate_ellipsoid_problem
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule
from rbsgd.solvers import (
    Anchors,
    StopRule,
    Trajectory,
    run_gd,
    run_pgd,
    run_sgd,
    solve_central_point,
)

__all__ = [
    "SolverSpec",
    "EnsembleStats",
    "TimingRecord",
    "EnsembleRunError",
    "run_with_spec",
    "run_ensemble",
    "time_to_tolerance",
    "sweep_constraints",
    "write_trajectories_csv",
    "read_trajectories_csv",
    "write_ensemble_csv",
    "read_ensemble_csv",
    "write_timing_csv",
    "read_timing_csv",
    "write_bounds_csv",
    "read_bounds_csv",
    "write_trajectory2d_csv",
    "write_barrier_shape_csv",
]

TRAJECTORIES_HEADER = ["run_id", "k", "err_to_xstar", "err_to_xc", "max_violation", "objective", "wall_ns"]
ENSEMBLE_HEADER = ["k", "mean_err", "std_err", "mean_violation", "runs"]
TIMING_HEADER = ["algorithm", "m", "seed", "k_tau", "wall_seconds", "converged"]
BOUNDS_HEADER = ["bound", "k", "lhs", "rhs", "margin", "holds"]
TRAJECTORY2D_HEADER = ["run_id", "k", "x1", "x2", "label"]
BARRIER_SHAPE_HEADER = ["z", "delta", "value"]


class EnsembleRunError(RuntimeError):
    def __init__(self, run_id: int, cause: BaseException):
        super().__init__(f"trajectory run_id={run_id} aborted: {cause}")
        self.run_id = run_id


@dataclass(frozen=True)
class SolverSpec:
    """One algorithm configuration, shared by ensembles and timing runs."""

    algorithm: str = "sgd"  # sgd | gd | pgd
    gamma: PowerLawSchedule = PowerLawSchedule(0.3, 0.8)
    barrier: BarrierSchedule = BarrierSchedule(1e-6, PowerLawSchedule(5.0, 0.3))
    step: float = 1e-2  # constant step for gd / pgd
    budget: int = 20_000
    batch: tuple[int, int] = (1, 1)
    stop_tol: float = 0.01
    stop_stride: int = 10
    force: bool = False

    def __post_init__(self) -> None:
        if self.algorithm not in ("sgd", "gd", "pgd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def describe(self) -> str:
        return (
            f"{self.algorithm};gamma={self.gamma.coefficient}*k^-{self.gamma.exponent};"
            f"eps={self.barrier.epsilon.coefficient}*k^-{self.barrier.epsilon.exponent};"
            f"delta_inf={self.barrier.delta_inf};step={self.step};budget={self.budget};"
            f"batch={self.batch};stop=({self.stop_tol},{self.stop_stride})"
        )


def run_with_spec(
    problem: Problem,
    spec: SolverSpec,
    *,
    seed: int = 0,
    run_id: int = 0,
    stop: Optional[StopRule] = None,
    anchors: Optional[Anchors] = None,
    record_every: Optional[int] = None,
    record_at: Sequence[int] = (),
    snapshot_dims: Optional[Sequence[int]] = None,
) -> Trajectory:
    """Dispatch one run of the configured algorithm."""
    if spec.algorithm == "sgd":
        return run_sgd(
            problem,
            spec.gamma,
            spec.barrier,
            spec.budget,
            stop=stop,
            seed=seed,
            run_id=run_id,
            batch=spec.batch,
            anchors=anchors,
            record_every=record_every,
            record_at=record_at,
            snapshot_dims=snapshot_dims,
            force=spec.force,
        )
    if spec.algorithm == "gd":
        return run_gd(
            problem,
            spec.step,
            spec.barrier,
            spec.budget,
            stop=stop,
            anchors=anchors,
            record_every=record_every,
            record_at=record_at,
            snapshot_dims=snapshot_dims,
        )
    return run_pgd(
        problem,
        spec.step,
        spec.budget,
        stop=stop,
        anchors=anchors,
        record_every=record_every,
        record_at=record_at,
    )


@dataclass
class EnsembleStats:
    """Aggregated error curve over an ensemble of trajectories."""

    ks: np.ndarray
    mean_err: np.ndarray
    std_err: np.ndarray  # population std: identically 0 for a single run
    mean_violation: np.ndarray
    runs: int
    config_hash: str
    k_tau: list = field(default_factory=list)  # per-run first stop-rule hit


def _ensemble_worker(args) -> Trajectory:
    problem, spec, master_seed, run_id, anchors, stop, record_every, record_at = args
    return run_with_spec(
        problem,
        spec,
        seed=master_seed,
        run_id=run_id,
        stop=stop,
        anchors=anchors,
        record_every=record_every,
        record_at=record_at,
    )


def run_ensemble(
    problem: Problem,
    spec: SolverSpec,
    runs: int,
    master_seed: int,
    anchors: Anchors,
    *,
    x_stop_ref: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
    record_at: Sequence[int] = (),
    workers: int = 1,
) -> tuple[EnsembleStats, list[Trajectory]]:
    """Run ``runs`` trajectories with seeds derived from ``(master_seed,
    run_id)`` and aggregate the error curve.

    Every trajectory runs its full budget (the stop rule, when a reference
    is given, is observed but does not halt) so all runs share one
    recording grid.  Results are reduced in run_id order, so worker count
    cannot change the output.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    if anchors.x_star is None:
        raise ValueError("ensemble aggregation needs the x_star anchor")
    stop = (
        StopRule(x_stop_ref, tol=spec.stop_tol, stride=spec.stop_stride, halt=False)
        if x_stop_ref is not None
        else None
    )
    jobs = [
        (problem, spec, master_seed, run_id, anchors, stop, record_every, tuple(record_at))
        for run_id in range(runs)
    ]
    trajectories: list[Trajectory]
    if workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                trajectories = list(pool.map(_ensemble_worker, jobs))
        except Exception:  # rerun serially to name the failing run
            trajectories = []
            for job in jobs:
                try:
                    trajectories.append(_ensemble_worker(job))
                except Exception as inner:
                    raise EnsembleRunError(job[3], inner) from inner
            raise
    else:
        trajectories = []
        for job in jobs:
            try:
                trajectories.append(_ensemble_worker(job))
            except Exception as inner:
                raise EnsembleRunError(job[3], inner) from inner

    ks = np.array([r.k for r in trajectories[0].records])
    for t in trajectories[1:]:
        if [r.k for r in t.records] != list(ks):
            raise EnsembleRunError(t.run_id, RuntimeError("recording grid mismatch"))
    errs = np.array([[r.err_to_xstar for r in t.records] for t in trajectories])
    viols = np.array([[r.max_violation for r in t.records] for t in trajectories])
    digest = hashlib.sha256(
        f"{problem.label}|{spec.describe()}|{master_seed}|{runs}".encode()
    ).hexdigest()
    stats = EnsembleStats(
        ks=ks,
        mean_err=errs.mean(axis=0),
        std_err=errs.std(axis=0),
        mean_violation=viols.mean(axis=0),
        runs=runs,
        config_hash=digest,
        k_tau=[t.k_tau for t in trajectories],
    )
    return stats, trajectories


@dataclass(frozen=True)
class TimingRecord:
    algorithm: str
    m: int
    seed: int
    k_tau: int
    wall_seconds: float
    converged: bool


def time_to_tolerance(
    problem: Problem,
    spec: SolverSpec,
    x_ref: np.ndarray,
    *,
    seed: int = 0,
    run_id: int = 0,
    tol: Optional[float] = None,
    warmup: bool = True,
) -> TimingRecord:
    """Wall time until the iterate first comes within ``tol`` of the
    reference point.

    Only the iteration loop is timed; problem generation and reference
    solves happen before the clock starts.  A truncated warm-up run is
    discarded first to absorb allocator and cache effects.  Timing runs
    must not share the process with other measured work.
    """
    tol = spec.stop_tol if tol is None else tol
    stop = StopRule(x_ref, tol=tol, stride=spec.stop_stride, halt=True)
    if warmup and spec.budget > 0:
        warm = replace(spec, budget=min(spec.budget, 300))
        run_with_spec(problem, warm, seed=seed, run_id=run_id, stop=stop)
    t0 = time.perf_counter()
    trajectory = run_with_spec(problem, spec, seed=seed, run_id=run_id, stop=stop)
    wall = time.perf_counter() - t0
    converged = trajectory.k_tau is not None
    return TimingRecord(
        algorithm=spec.algorithm,
        m=problem.m,
        seed=seed,
        k_tau=trajectory.k_tau if converged else trajectory.final_k,
        wall_seconds=wall,
        converged=converged,
    )


def sweep_constraints(
    m_list: Sequence[int],
    algorithms: Sequence[str],
    base_spec: SolverSpec,
    *,
    d: int = 50,
    n: int = 10,
    problem_seed: int = 1,
    run_seeds: Sequence[int] = (0,),
    reference_delta: float = 1e-9,
    reference_grad_tol: float = 1e-10,
    budgets: Optional[dict] = None,
    generator_kwargs: Optional[dict] = None,
) -> list[TimingRecord]:
    """Time each algorithm at each constraint count.

    The problem is regenerated per ``m`` (same generator seed, fixed ``d``
    and ``n``) and the stop reference is solved once per ``m`` outside the
    timed section.  ``budgets`` optionally overrides the iteration budget
    per algorithm; ``generator_kwargs`` is passed to the problem generator.
    """
    if list(m_list) != sorted(m_list):
        raise ValueError("m_list must be ascending")
    records = []
    for m in m_list:
        problem = generate_ellipsoid_problem(
            d=d, m=m, n=n, seed=problem_seed, **(generator_kwargs or {})
        )
        x_ref = solve_central_point(problem, reference_delta, grad_tol=reference_grad_tol)
        for algorithm in algorithms:
            spec = replace(base_spec, algorithm=algorithm)
            if budgets and algorithm in budgets:
                spec = replace(spec, budget=budgets[algorithm])
            for seed in run_seeds:
                records.append(
                    time_to_tolerance(problem, spec, x_ref, seed=seed, run_id=seed)
                )
    return records


# ---------------------------------------------------------------------------
# CSV persistence.  Floats are written with shortest round-trip repr, so a
# write/read cycle reproduces values exactly.


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trajectories_csv(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORIES_HEADER)
        for t in trajectories:
            for r in t.records:
                writer.writerow(
                    [
                        t.run_id,
                        r.k,
                        _fmt(r.err_to_xstar),
                        _fmt(r.err_to_xc),
                        _fmt(r.max_violation),
                        _fmt(r.objective),
                        r.wall_ns,
                    ]
                )


def read_trajectories_csv(path) -> list[dict]:
    return _read_csv(path, TRAJECTORIES_HEADER, {"run_id": int, "k": int, "wall_ns": int})


def write_ensemble_csv(path, stats: EnsembleStats) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ENSEMBLE_HEADER)
        for i, k in enumerate(stats.ks):
            writer.writerow(
                [
                    int(k),
                    _fmt(stats.mean_err[i]),
                    _fmt(stats.std_err[i]),
                    _fmt(stats.mean_violation[i]),
                    stats.runs,
                ]
            )


def read_ensemble_csv(path) -> list[dict]:
    return _read_csv(path, ENSEMBLE_HEADER, {"k": int, "runs": int})


def write_timing_csv(path, records: Sequence[TimingRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TIMING_HEADER)
        for r in records:
            writer.writerow(
                [r.algorithm, r.m, r.seed, r.k_tau, _fmt(r.wall_seconds), str(r.converged).lower()]
            )


def read_timing_csv(path) -> list[TimingRecord]:
    rows = _read_csv(
        path, TIMING_HEADER, {"m": int, "seed": int, "k_tau": int, "algorithm": str, "converged": _parse_bool}
    )
    return [TimingRecord(**row) for row in rows]


def write_bounds_csv(path, checks) -> None:
    """Rows are bound-check results; ``k`` is empty for k-independent checks."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(BOUNDS_HEADER)
        for c in checks:
            writer.writerow(
                [
                    c.bound,
                    "" if c.k is None else c.k,
                    _fmt(c.lhs),
                    _fmt(c.rhs),
                    _fmt(c.margin),
                    str(c.holds).lower(),
                ]
            )


def read_bounds_csv(path) -> list[dict]:
    def parse_k(text: str):
        return None if text == "" else int(text)

    return _read_csv(path, BOUNDS_HEADER, {"bound": str, "k": parse_k, "holds": _parse_bool})


def write_trajectory2d_csv(path, labeled_trajectories: Sequence[tuple[str, Trajectory]]) -> None:
    """Plane-projection table for trajectory plots; needs snapshot dims (0, 1)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY2D_HEADER)
        for label, t in labeled_trajectories:
            for r in t.records:
                if r.snapshot is None:
                    raise ValueError("trajectory has no coordinate snapshots")
                writer.writerow([t.run_id, r.k, _fmt(r.snapshot[0]), _fmt(r.snapshot[1]), label])


def write_barrier_shape_csv(path, z_grid, deltas) -> None:
    """Barrier value table over a z-grid for each barrier parameter."""
    from rbsgd.barrier import b_value

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(BARRIER_SHAPE_HEADER)
        for delta in deltas:
            values = np.asarray(b_value(np.asarray(z_grid, dtype=float), delta))
            for z, v in zip(z_grid, values):
                writer.writerow([_fmt(z), _fmt(delta), _fmt(v)])


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _read_csv(path, expected_header, converters) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != expected_header:
            raise ValueError(f"unexpected header {header!r}, want {expected_header!r}")
        rows = []
        for raw in reader:
            row = {}
            for name, text in zip(header, raw):
                conv = converters.get(name, float)
                row[name] = conv(text)
            rows.append(row)
    return rows
