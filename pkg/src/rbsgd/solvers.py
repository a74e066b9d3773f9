"""Descent loops: the stochastic barrier update, full-gradient descent,
projected gradient descent, and the central-point reference solver.

The stochastic update draws one objective component and one constraint per
iteration (uniformly and independently) and steps along

    x_{k+1} = x_k - gamma_k * (grad f_i(x_k) + a_j * b_slope(g_j(x_k), delta_k))

starting at ``k = 1``.  Every trajectory derives two independent Philox
substreams (component draws, constraint draws) from ``(master seed,
run_id)``, so ensembles are reproducible and order-independent: the same
seed always yields the same trajectory bit for bit, however runs are
scheduled.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from rbsgd.barrier import b_curvature, b_slope, b_value
from rbsgd.problem import AffineConstraintSet, Problem
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule, validate

__all__ = [
    "SamplerDraw",
    "SolverState",
    "StopRule",
    "Trajectory",
    "TrajectoryRecord",
    "ScheduleError",
    "NonFiniteIterateError",
    "DivergenceError",
    "ProjectionError",
    "CentralPointError",
    "trajectory_streams",
    "make_state",
    "sgd_step",
    "run_sgd",
    "run_gd",
    "run_pgd",
    "dykstra_project",
    "solve_central_point",
    "composite_value",
    "composite_hessian",
    "composite_grad",
]


class ScheduleError(ValueError):
    """Schedule fails the summability conditions and no override was given."""


class NonFiniteIterateError(RuntimeError):
    def __init__(self, k: int):
        super().__init__(f"iterate became non-finite at iteration k={k}")
        self.k = k


class DivergenceError(RuntimeError):
    def __init__(self, k: int, norm: float):
        super().__init__(f"iterate norm {norm:.3e} exceeded divergence guard at k={k}")
        self.k = k
        self.norm = norm


class ProjectionError(RuntimeError):
    def __init__(self, best: np.ndarray, violation: float, sweeps: int):
        super().__init__(
            f"projection did not reach tolerance in {sweeps} sweeps "
            f"(best violation {violation:.3e})"
        )
        self.best = best
        self.violation = violation


class CentralPointError(RuntimeError):
    def __init__(self, grad_norm: float, iterations: int):
        super().__init__(
            f"central-point solve stalled at gradient norm {grad_norm:.3e} "
            f"after {iterations} iterations"
        )
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class SamplerDraw:
    """One draw of (component index, constraint index)."""

    i: int
    j: int


def trajectory_streams(seed: int, run_id: int = 0) -> tuple[np.random.Generator, np.random.Generator]:
    """Two independent counter-based generators for one trajectory.

    Component draws come from the first stream, constraint draws from the
    second, so pre-generating draws in blocks cannot change the sequences.
    """
    children = np.random.SeedSequence((int(seed), int(run_id))).spawn(2)
    return tuple(np.random.Generator(np.random.Philox(c)) for c in children)


@dataclass
class SolverState:
    """Iterate, next iteration index, and the trajectory's draw streams."""

    x: np.ndarray
    k: int
    rng_components: np.random.Generator
    rng_constraints: np.random.Generator


def make_state(
    problem: Problem, seed: int = 0, run_id: int = 0, x0: Optional[np.ndarray] = None
) -> SolverState:
    """Fresh solver state; the default start is the origin (strictly feasible
    for generated problems)."""
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (problem.d,):
        raise ValueError(f"x0 shape {x.shape} != ({problem.d},)")
    rng_i, rng_j = trajectory_streams(seed, run_id)
    return SolverState(x=x, k=1, rng_components=rng_i, rng_constraints=rng_j)


@dataclass(frozen=True)
class StopRule:
    """Stop when ``|x_k - x_ref| <= tol``, checked every ``stride`` iterations.

    With ``halt=False`` the run continues to its budget but the first
    iteration satisfying the rule is still recorded (``k_tau``).
    """

    x_ref: np.ndarray
    tol: float = 0.01
    stride: int = 10
    halt: bool = True


@dataclass(frozen=True)
class TrajectoryRecord:
    k: int
    err_to_xstar: float
    err_to_xc: float
    max_violation: float
    objective: float
    wall_ns: int
    snapshot: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class Terminal:
    reason: str  # "budget" | "tolerance"
    k_final: int


@dataclass
class Trajectory:
    run_id: int
    records: list[TrajectoryRecord] = field(default_factory=list)
    terminal: Optional[Terminal] = None
    k_tau: Optional[int] = None  # first iteration satisfying the stop rule

    @property
    def final_k(self) -> int:
        return self.terminal.k_final if self.terminal else 0


@dataclass(frozen=True)
class Anchors:
    """Reference points for error columns: the barrier-path limit point and
    the constrained-minimizer proxy."""

    x_star: Optional[np.ndarray] = None
    x_c: Optional[np.ndarray] = None


def _scalar_slope(z: float, delta: float) -> float:
    if z < -delta:
        return -delta / z
    return (z + 2.0 * delta) / delta


def _stochastic_grad(
    problem: Problem, x: np.ndarray, draws_i: np.ndarray, draws_j: np.ndarray, delta: float
) -> np.ndarray:
    """Averaged sampled gradient for one update (batch sizes >= 1)."""
    alphas = problem.objective.alphas
    beta = problem.objective.beta
    if draws_i.size == 1:
        a = alphas[draws_i[0]]
        gf = a * expit(a * x) + 2.0 * (x - beta)
    else:
        a = alphas[draws_i]
        gf = np.mean(a * expit(a * x), axis=0) + 2.0 * (x - beta)
    normals = problem.constraints.normals
    offsets = problem.constraints.offsets
    if draws_j.size == 1:
        j = draws_j[0]
        row = normals[j]
        gb = row * _scalar_slope(float(row @ x + offsets[j]), delta)
    else:
        rows = normals[draws_j]
        resid = rows @ x + offsets[draws_j]
        gb = np.mean(rows * np.asarray(b_slope(resid, delta))[:, None], axis=0)
    return gf + gb


def sgd_step(
    state: SolverState,
    problem: Problem,
    gamma: PowerLawSchedule,
    barrier: BarrierSchedule,
    batch: tuple[int, int] = (1, 1),
) -> SolverState:
    """One stochastic update; advances the iteration counter and streams."""
    bi, bj = batch
    draws_i = state.rng_components.integers(0, problem.n, size=bi)
    draws_j = state.rng_constraints.integers(0, problem.m, size=bj)
    k = state.k
    g = _stochastic_grad(problem, state.x, draws_i, draws_j, barrier.delta(k))
    x_new = state.x - gamma(k) * g
    if not math.isfinite(float(x_new @ x_new)):
        raise NonFiniteIterateError(k)
    return replace(state, x=x_new, k=k + 1)


def _record_grid(budget: int, record_every: Optional[int], extra: Sequence[int] = ()) -> set[int]:
    """Iterations to record: geometric by default, linear if a stride is given."""
    ks: set[int] = {0, budget}
    if record_every is not None:
        ks.update(range(record_every, budget + 1, record_every))
    else:
        k = 1
        while k <= budget:
            ks.add(k)
            k *= 2
    ks.update(k for k in extra if 0 <= k <= budget)
    return ks


class _Recorder:
    def __init__(
        self,
        problem: Problem,
        anchors: Optional[Anchors],
        snapshot_dims: Optional[Sequence[int]],
    ):
        self.problem = problem
        self.anchors = anchors or Anchors()
        self.snapshot_dims = tuple(snapshot_dims) if snapshot_dims is not None else None
        self.t0 = time.perf_counter_ns()
        self.records: list[TrajectoryRecord] = []

    def record(self, k: int, x: np.ndarray) -> None:
        a = self.anchors
        err_star = float(np.linalg.norm(x - a.x_star)) if a.x_star is not None else math.nan
        err_c = float(np.linalg.norm(x - a.x_c)) if a.x_c is not None else math.nan
        snap = tuple(float(x[i]) for i in self.snapshot_dims) if self.snapshot_dims else None
        self.records.append(
            TrajectoryRecord(
                k=k,
                err_to_xstar=err_star,
                err_to_xc=err_c,
                max_violation=self.problem.max_violation(x),
                objective=self.problem.objective.value(x),
                wall_ns=time.perf_counter_ns() - self.t0,
                snapshot=snap,
            )
        )


def _check_schedules(gamma: PowerLawSchedule, barrier: BarrierSchedule, force: bool) -> None:
    report = validate(gamma, barrier.epsilon)
    if report.valid is False and not force:
        raise ScheduleError(
            f"schedule fails summability conditions ({report.describe()}); "
            "pass force=True to run anyway"
        )


def run_sgd(
    problem: Problem,
    gamma: PowerLawSchedule,
    barrier: BarrierSchedule,
    budget: int,
    *,
    stop: Optional[StopRule] = None,
    seed: int = 0,
    run_id: int = 0,
    batch: tuple[int, int] = (1, 1),
    x0: Optional[np.ndarray] = None,
    anchors: Optional[Anchors] = None,
    record_every: Optional[int] = None,
    record_at: Sequence[int] = (),
    snapshot_dims: Optional[Sequence[int]] = None,
    force: bool = False,
) -> Trajectory:
    """Run the stochastic update for ``budget`` iterations or until the stop
    rule fires.

    The trajectory is a deterministic function of ``(seed, run_id)`` and the
    configuration.  Draw tables are pre-generated from the two trajectory
    substreams, which reproduces step-by-step :func:`sgd_step` exactly.
    """
    _check_schedules(gamma, barrier, force)
    bi, bj = batch
    if bi < 1 or bj < 1:
        raise ValueError(f"batch sizes must be >= 1, got {batch}")
    state = make_state(problem, seed=seed, run_id=run_id, x0=x0)
    x = state.x
    grid = _record_grid(budget, record_every, record_at)
    rec = _Recorder(problem, anchors, snapshot_dims)
    rec.record(0, x)

    draws_i = state.rng_components.integers(0, problem.n, size=(budget, bi)) if budget else None
    draws_j = state.rng_constraints.integers(0, problem.m, size=(budget, bj)) if budget else None

    ks = np.arange(1, budget + 1, dtype=np.float64)
    gammas = gamma.coefficient * ks**-gamma.exponent
    deltas = barrier.delta_inf + barrier.epsilon.coefficient * ks**-barrier.epsilon.exponent

    alphas = problem.objective.alphas
    beta = problem.objective.beta
    normals = problem.constraints.normals
    offsets = problem.constraints.offsets
    simple = bi == 1 and bj == 1

    trajectory = Trajectory(run_id=run_id)
    check_stride = stop.stride if stop is not None else 0
    terminal = Terminal("budget", budget)

    # Overflow in the tripwire dot product below is the detection signal,
    # not an anomaly worth a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(budget):
            k = t + 1
            dk = deltas[t]
            if simple:
                a = alphas[draws_i[t, 0]]
                gf = a * expit(a * x) + 2.0 * (x - beta)
                j = draws_j[t, 0]
                row = normals[j]
                g = gf + row * _scalar_slope(float(row @ x + offsets[j]), dk)
            else:
                g = _stochastic_grad(problem, x, draws_i[t], draws_j[t], dk)
            x = x - gammas[t] * g
            if not math.isfinite(float(x @ x)):
                raise NonFiniteIterateError(k)
            if check_stride and k % check_stride == 0 and trajectory.k_tau is None:
                if float(np.linalg.norm(x - stop.x_ref)) <= stop.tol:
                    trajectory.k_tau = k
                    if stop.halt:
                        rec.record(k, x)
                        terminal = Terminal("tolerance", k)
                        break
            if k in grid:
                rec.record(k, x)

    trajectory.records = rec.records
    trajectory.terminal = terminal
    return trajectory


def barrier_mean_grad(constraints: AffineConstraintSet, x: np.ndarray, delta: float) -> np.ndarray:
    """Full barrier gradient ``(1/m) sum_j a_j b_slope(g_j(x), delta)``."""
    slopes = np.asarray(b_slope(constraints.residuals(x), delta))
    return constraints.normals.T @ slopes / constraints.m


def composite_value(problem: Problem, x: np.ndarray, delta: float) -> float:
    """Objective plus averaged barrier over all constraints."""
    resid = problem.constraints.residuals(x)
    return problem.objective.value(x) + float(np.mean(b_value(resid, delta)))


def composite_grad(problem: Problem, x: np.ndarray, delta: float) -> np.ndarray:
    return problem.objective.grad(x) + barrier_mean_grad(problem.constraints, x, delta)


_DIVERGENCE_GUARD = 1e12


def run_gd(
    problem: Problem,
    gamma: float,
    barrier: BarrierSchedule,
    budget: int,
    *,
    stop: Optional[StopRule] = None,
    anchors: Optional[Anchors] = None,
    record_every: Optional[int] = None,
    record_at: Sequence[int] = (),
    snapshot_dims: Optional[Sequence[int]] = None,
    x0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Deterministic descent on the barrier-augmented objective with a
    constant step size and the full constraint sum every iteration."""
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    grid = _record_grid(budget, record_every, record_at)
    rec = _Recorder(problem, anchors, snapshot_dims)
    rec.record(0, x)
    trajectory = Trajectory(run_id=0)
    check_stride = stop.stride if stop is not None else 0
    terminal = Terminal("budget", budget)

    for t in range(budget):
        k = t + 1
        x = x - gamma * composite_grad(problem, x, barrier.delta(k))
        norm = float(np.linalg.norm(x))
        if not math.isfinite(norm) or norm > _DIVERGENCE_GUARD:
            raise DivergenceError(k, norm)
        if check_stride and k % check_stride == 0 and trajectory.k_tau is None:
            if float(np.linalg.norm(x - stop.x_ref)) <= stop.tol:
                trajectory.k_tau = k
                if stop.halt:
                    rec.record(k, x)
                    terminal = Terminal("tolerance", k)
                    break
        if k in grid:
            rec.record(k, x)

    trajectory.records = rec.records
    trajectory.terminal = terminal
    return trajectory


def dykstra_project(
    x: np.ndarray,
    constraints: AffineConstraintSet,
    tol: float = 1e-9,
    max_sweeps: int = 2000,
) -> np.ndarray:
    """Euclidean projection onto the halfspace intersection by Dykstra's
    corrected alternating projections.

    Returns a point within ``tol`` feasibility and within ``tol`` sweep
    displacement of the fixed point.  Halfspaces never touched by the
    iterate keep zero corrections, so only constraints that were violated
    at some sweep participate.
    """
    x = np.asarray(x, dtype=np.float64)
    if constraints.max_violation(x) <= tol:
        return x.copy()
    normals = constraints.normals
    offsets = constraints.offsets
    sq_norms = constraints.row_norms**2
    if np.any(sq_norms == 0.0):
        raise ValueError("zero constraint normal has no projection")

    y = x.copy()
    corrections: dict[int, np.ndarray] = {}
    active: list[int] = list(np.flatnonzero(constraints.residuals(y) > tol))
    for sweep in range(max_sweeps):
        y_prev = y.copy()
        for j in active:
            p = corrections.get(j)
            z = y + p if p is not None else y
            resid = float(normals[j] @ z + offsets[j])
            if resid > 0.0:
                step = resid / sq_norms[j]
                y = z - step * normals[j]
                corrections[j] = z - y
            else:
                y = z
                if p is not None:
                    del corrections[j]
        violated = np.flatnonzero(constraints.residuals(y) > tol)
        newly = [j for j in violated if j not in set(active)]
        if newly:
            active.extend(newly)
        displacement = float(np.linalg.norm(y - y_prev))
        if violated.size == 0 and displacement <= tol and not newly:
            return y
    raise ProjectionError(y, constraints.max_violation(y), max_sweeps)


def run_pgd(
    problem: Problem,
    gamma: float,
    budget: int,
    *,
    stop: Optional[StopRule] = None,
    anchors: Optional[Anchors] = None,
    record_every: Optional[int] = None,
    record_at: Sequence[int] = (),
    x0: Optional[np.ndarray] = None,
    projection_tol: float = 1e-9,
    max_sweeps: int = 2000,
) -> Trajectory:
    """Projected gradient descent baseline: objective step, then projection
    onto the feasible polyhedron.  Every recorded iterate is feasible up to
    the projection tolerance."""
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    grid = _record_grid(budget, record_every, record_at)
    rec = _Recorder(problem, anchors, None)
    rec.record(0, x)
    trajectory = Trajectory(run_id=0)
    check_stride = stop.stride if stop is not None else 0
    terminal = Terminal("budget", budget)

    for t in range(budget):
        k = t + 1
        x = dykstra_project(
            x - gamma * problem.objective.grad(x),
            problem.constraints,
            tol=projection_tol,
            max_sweeps=max_sweeps,
        )
        if check_stride and k % check_stride == 0 and trajectory.k_tau is None:
            if float(np.linalg.norm(x - stop.x_ref)) <= stop.tol:
                trajectory.k_tau = k
                if stop.halt:
                    rec.record(k, x)
                    terminal = Terminal("tolerance", k)
                    break
        if k in grid:
            rec.record(k, x)

    trajectory.records = rec.records
    trajectory.terminal = terminal
    return trajectory


def composite_hessian(problem: Problem, x: np.ndarray, delta: float) -> np.ndarray:
    """Hessian of the barrier-augmented objective: a diagonal objective part
    plus the curvature-weighted constraint Gram matrix."""
    obj = problem.objective
    t = obj.alphas * x
    s = expit(t)
    diag_f = np.mean(obj.alphas**2 * s * (1.0 - s), axis=0) + 2.0
    curv = np.asarray(b_curvature(problem.constraints.residuals(x), delta))
    normals = problem.constraints.normals
    hess = (normals * (curv / problem.m)[:, None]).T @ normals
    hess[np.diag_indices_from(hess)] += diag_f
    return hess


def solve_central_point(
    problem: Problem,
    delta: float,
    grad_tol: float = 1e-10,
    max_iter: int = 500,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Minimizer of the barrier-augmented objective at a fixed ``delta``.

    Deterministic damped-Newton descent with backtracking, plus
    continuation: the barrier parameter is walked down geometrically from
    ``max(delta, 1)`` so each stage starts near its minimizer.  Newton
    directions are essential here: with near-active constraints the
    composite curvature grows like ``|a|^2/delta`` and first-order descent
    needs millions of iterations at small ``delta``.  Once the gradient is
    small the full step is accepted whenever it shrinks the gradient norm,
    because the backtracking value test cannot resolve decrements below
    float64 rounding of the composite value.  Strong convexity makes the
    minimizer unique.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()

    stages = []
    d_stage = max(delta, 1.0)
    while d_stage > delta * 1.0000001:
        stages.append(d_stage)
        d_stage /= 10.0
    stages.append(delta)

    iterations = 0
    value_floor = 1e-6  # gradient norm below which the value test is noise
    for stage_idx, d_stage in enumerate(stages):
        # Intermediate stages only need a rough solve; the target gets grad_tol.
        tol = grad_tol if stage_idx == len(stages) - 1 else max(grad_tol, 1e-6)
        g = composite_grad(problem, x, d_stage)
        gnorm = float(np.linalg.norm(g))
        while gnorm > tol:
            if iterations >= max_iter:
                raise CentralPointError(gnorm, iterations)
            iterations += 1
            direction = np.linalg.solve(composite_hessian(problem, x, d_stage), g)
            if gnorm > value_floor:
                val = composite_value(problem, x, d_stage)
                slope = float(g @ direction)
                t = 1.0
                while t >= 1e-12:
                    x_new = x - t * direction
                    if composite_value(problem, x_new, d_stage) <= val - 0.25 * t * slope:
                        break
                    t *= 0.5
                else:
                    raise CentralPointError(gnorm, iterations)
                x = x_new
                g = composite_grad(problem, x, d_stage)
                gnorm = float(np.linalg.norm(g))
            else:
                t = 1.0
                while t >= 0.125:
                    x_new = x - t * direction
                    g_new = composite_grad(problem, x_new, d_stage)
                    gnorm_new = float(np.linalg.norm(g_new))
                    if gnorm_new < gnorm:
                        x, g, gnorm = x_new, g_new, gnorm_new
                        break
                    t *= 0.5
                else:
                    # No damping reduces the measured gradient: the float64
                    # noise floor of the gradient evaluation has been hit.
                    raise CentralPointError(gnorm, iterations)
    return x
