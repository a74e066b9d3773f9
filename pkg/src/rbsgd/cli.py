"""Command-line entry point.

Subcommands wire one TOML configuration to the generators, solvers,
verifiers, and benchmark harness:

* ``generate``   write the problem instance file
* ``central``    solve barrier reference points and report their gaps
* ``solve``      run solver trajectories, write trajectories.csv
* ``bench``      ensemble statistics or timing sweeps
* ``verify``     run the bound suite, write bounds.csv
* ``plot-data``  emit the barrier-shape table for figure rendering

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 verification failure.  ``RBSGD_OUTPUT_DIR`` overrides the configured
output directory.  All randomness derives from the configured master seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from rbsgd import bench as bench_mod
from rbsgd.bench import (
    SolverSpec,
    run_ensemble,
    run_with_spec,
    sweep_constraints,
    write_barrier_shape_csv,
    write_bounds_csv,
    write_ensemble_csv,
    write_timing_csv,
    write_trajectories_csv,
    write_trajectory2d_csv,
)
from rbsgd.config import ConfigError, RunConfig, load_config
from rbsgd.problem import Problem, generate_ellipsoid_problem, load_problem, save_problem
from rbsgd.schedules import validate
from rbsgd.solvers import (
    Anchors,
    CentralPointError,
    DivergenceError,
    NonFiniteIterateError,
    ProjectionError,
    ScheduleError,
    StopRule,
    make_state,
    sgd_step,
    solve_central_point,
)
from rbsgd.theory import (
    K0NotFoundError,
    check_bound_c_norm,
    check_bound_c_sq,
    check_bound_phi_sq,
    check_descent,
    check_unbiasedness,
    compute_constants,
    find_k0,
)

X_C_PROXY_DELTA = 1e-9  # barrier level standing in for the constrained minimizer
# Default gradient target for the proxy solve.  With constraints active at
# the optimum, float64 cancellation in the residuals floors the attainable
# gradient norm near 1e-8..1e-7 at this barrier level; the proxy only
# anchors a 1e-2 stop rule, so 1e-6 is ample and robust.
X_C_PROXY_GRAD_TOL = 1e-6

_RUNTIME_ERRORS = (
    CentralPointError,
    DivergenceError,
    NonFiniteIterateError,
    ProjectionError,
    K0NotFoundError,
    bench_mod.EnsembleRunError,
    FileNotFoundError,
    OSError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(config: RunConfig) -> Path:
    directory = os.environ.get("RBSGD_OUTPUT_DIR", config.output_dir)
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _problem_path(config: RunConfig) -> Path:
    return _out_dir(config) / "problem.bin"


def _load_problem(config: RunConfig) -> Problem:
    path = _problem_path(config)
    if not path.exists():
        raise FileNotFoundError(f"problem file {path} not found; run `rbsgd generate` first")
    return load_problem(path)


def _central_path(config: RunConfig, delta: float, grad_tol: float) -> Path:
    return _out_dir(config) / f"central_{delta:.0e}_g{grad_tol:.0e}.npy"


def _reference(config: RunConfig, problem: Problem, delta: float, grad_tol: float) -> np.ndarray:
    """Load a cached central point or solve and cache it."""
    path = _central_path(config, delta, grad_tol)
    if path.exists():
        return np.load(path)
    x = solve_central_point(problem, delta, grad_tol=grad_tol)
    np.save(path, x)
    return x


def _anchors(config: RunConfig, problem: Problem) -> Anchors:
    x_star = _reference(config, problem, config.solver.delta_inf, X_C_PROXY_GRAD_TOL)
    x_c = _reference(config, problem, X_C_PROXY_DELTA, X_C_PROXY_GRAD_TOL)
    return Anchors(x_star=x_star, x_c=x_c)


def _check_schedule(config: RunConfig, force: bool) -> None:
    spec = config.solver.spec()
    if spec.algorithm != "sgd":
        return
    report = validate(spec.gamma, spec.barrier.epsilon)
    if report.valid is False and not force:
        raise ScheduleError(
            f"schedule fails summability conditions ({report.describe()}); rerun with --force"
        )


def cmd_generate(args) -> int:
    config = load_config(args.config)
    p = config.problem
    problem = generate_ellipsoid_problem(
        d=p.d,
        m=p.m,
        n=p.n,
        seed=p.seed,
        radius2=p.radius2,
        q_range=p.q_range,
        alpha_range=p.alpha_range,
        target_norm=p.target_norm,
    )
    path = _problem_path(config)
    save_problem(problem, path)
    mu, lip = problem.objective.mu, problem.objective.lipschitz
    print(f"wrote {path}")
    print(f"beta={problem.objective.beta!r} mu={mu} L={lip}")
    return 0


def cmd_central(args) -> int:
    config = load_config(args.config)
    problem = _load_problem(config)
    deltas = args.delta or [config.solver.delta_inf, X_C_PROXY_DELTA]
    points = []
    for delta in deltas:
        x = _reference(config, problem, delta, args.grad_tol)
        points.append((delta, x))
        print(f"central point delta={delta:g} -> {_central_path(config, delta, args.grad_tol)}")
    for (da, xa), (db, xb) in zip(points, points[1:]):
        print(f"|x*({da:g}) - x*({db:g})| = {float(np.linalg.norm(xa - xb)):.6e}")
    return 0


def cmd_solve(args) -> int:
    config = load_config(args.config)
    _check_schedule(config, args.force)
    problem = _load_problem(config)
    anchors = _anchors(config, problem)
    spec = config.solver.spec()
    if args.force:
        spec = replace(spec, force=True)
    stop = None
    if config.solver.stop.mode == "tolerance":
        stop = StopRule(anchors.x_c, tol=spec.stop_tol, stride=spec.stop_stride, halt=True)
    record_every = config.runs.record_stride or None
    snapshot = (0, 1) if args.snapshot2d and problem.d >= 2 else None
    trajectories = []
    for run_id in range(config.runs.trajectories):
        trajectories.append(
            run_with_spec(
                problem,
                spec,
                seed=config.runs.master_seed,
                run_id=run_id,
                stop=stop,
                anchors=anchors,
                record_every=record_every,
                snapshot_dims=snapshot,
            )
        )
    out = _out_dir(config) / "trajectories.csv"
    write_trajectories_csv(out, trajectories)
    print(f"wrote {out} ({len(trajectories)} trajectories)")
    if snapshot:
        eps = spec.barrier.epsilon
        label = f"eps={eps.coefficient:g}k^-{eps.exponent:g}"
        out2d = _out_dir(config) / "trajectory2d.csv"
        write_trajectory2d_csv(out2d, [(label, t) for t in trajectories])
        print(f"wrote {out2d}")
    stopped = [t.k_tau for t in trajectories if t.k_tau is not None]
    if stop is not None:
        print(f"stop rule reached in {len(stopped)}/{len(trajectories)} runs")
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    out = _out_dir(config)
    if args.mode == "ensemble":
        _check_schedule(config, args.force)
        problem = _load_problem(config)
        anchors = _anchors(config, problem)
        spec = config.solver.spec()
        if args.force:
            spec = replace(spec, force=True)
        record_every = config.runs.record_stride or None
        stats, trajectories = run_ensemble(
            problem,
            spec,
            config.runs.trajectories,
            config.runs.master_seed,
            anchors,
            x_stop_ref=anchors.x_c,
            record_every=record_every,
            record_at=args.record_at or (),
            workers=args.workers,
        )
        write_ensemble_csv(out / "ensemble.csv", stats)
        write_trajectories_csv(out / "trajectories.csv", trajectories)
        reached = sum(1 for k in stats.k_tau if k is not None)
        print(f"wrote {out / 'ensemble.csv'} and {out / 'trajectories.csv'}")
        print(f"stop rule reached in {reached}/{stats.runs} runs")
        return 0
    # timing sweep
    m_list = args.m_list
    if not m_list:
        raise ConfigError("--m-list is required for timing mode")
    base = config.solver.spec()
    budgets = {}
    if args.budget_sgd:
        budgets["sgd"] = args.budget_sgd
    if args.budget_gd:
        budgets["gd"] = args.budget_gd
    if args.budget_pgd:
        budgets["pgd"] = args.budget_pgd
    records = sweep_constraints(
        m_list,
        args.algorithms,
        base,
        d=config.problem.d,
        n=config.problem.n,
        problem_seed=config.problem.seed,
        run_seeds=args.seeds,
        reference_grad_tol=X_C_PROXY_GRAD_TOL,
        budgets=budgets or None,
        generator_kwargs={
            "radius2": config.problem.radius2,
            "q_range": config.problem.q_range,
            "alpha_range": config.problem.alpha_range,
            "target_norm": config.problem.target_norm,
        },
    )
    write_timing_csv(out / "timing.csv", records)
    print(f"wrote {out / 'timing.csv'} ({len(records)} records)")
    for r in records:
        status = "ok" if r.converged else "UNCONVERGED"
        print(f"  {r.algorithm:>4} m={r.m:<8} seed={r.seed} k_tau={r.k_tau:<9} {r.wall_seconds:.3f}s {status}")
    return 0


def cmd_verify(args) -> int:
    config = load_config(args.config)
    problem = _load_problem(config)
    spec = config.solver.spec()
    constants = compute_constants(problem, config.solver.delta_inf, grad_tol=args.grad_tol)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((config.runs.master_seed, 0xB0))))
    checks = []

    def sample_x() -> np.ndarray:
        direction = rng.standard_normal(problem.d)
        direction /= np.linalg.norm(direction)
        return constants.x_star + direction * rng.uniform(0.0, args.radius)

    def sample_k() -> int:
        return int(10 ** rng.uniform(0.0, 6.0))

    for _ in range(args.samples):
        x, k = sample_x(), sample_k()
        checks.append(check_bound_c_norm(problem, constants, spec.gamma, spec.barrier, x, k))
        checks.append(check_bound_c_sq(problem, constants, spec.gamma, spec.barrier, x, k))
        checks.append(check_bound_phi_sq(problem, constants, x))
    for _ in range(args.unbiased_points):
        delta = spec.barrier.delta(sample_k())
        checks.append(check_unbiasedness(problem, sample_x(), delta))

    descent_note = ""
    try:
        k0 = find_k0(constants, spec.gamma, spec.barrier, k_max=args.k_max)
    except K0NotFoundError:
        k0 = None
        descent_note = (
            f"descent checks skipped: contraction threshold exceeds --k-max={args.k_max}"
        )
    if k0 is not None and args.descent_states > 0:
        state = make_state(problem, seed=config.runs.master_seed, run_id=0)
        target = k0 + 2 * args.descent_states
        collected = 0
        while state.k <= target and collected < args.descent_states:
            state = sgd_step(state, problem, spec.gamma, spec.barrier, batch=spec.batch)
            k = state.k - 1
            if k >= k0 and (k - k0) % 2 == 0:
                checks.append(
                    check_descent(problem, constants, spec.gamma, spec.barrier, state.x, k, k0=k0)
                )
                collected += 1

    out = _out_dir(config) / "bounds.csv"
    write_bounds_csv(out, checks)
    gated = [c for c in checks if c.gated]
    failures = [c for c in gated if not c.holds]
    by_bound: dict[str, list] = {}
    for c in gated:
        by_bound.setdefault(c.bound, []).append(c)
    print(f"wrote {out} ({len(checks)} rows)")
    for name, group in sorted(by_bound.items()):
        bad = sum(1 for c in group if not c.holds)
        worst = min(c.margin for c in group)
        print(f"  {name:>12}: {len(group):>6} checks, {bad} violations, min margin {worst:.3e}")
    if descent_note:
        print(f"  {descent_note}")
    if failures:
        print(f"VERIFICATION FAILED: {len(failures)} gated checks violated", file=sys.stderr)
        return 3
    print("all gated checks hold")
    return 0


def cmd_plot_data(args) -> int:
    config = load_config(args.config)
    out = _out_dir(config) / "barrier.csv"
    z = np.linspace(args.z_min, args.z_max, args.points)
    write_barrier_shape_csv(out, z, args.deltas)
    print(f"wrote {out}")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def _str_list(text: str) -> list[str]:
    return [part for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rbsgd", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the TOML run configuration")
        return p

    p = add("generate", "generate the problem instance and write problem.bin")
    p.set_defaults(func=cmd_generate)

    p = add("central", "solve central points at one or more barrier levels")
    p.add_argument("--delta", type=float, action="append", help="barrier level (repeatable)")
    p.add_argument("--grad-tol", type=float, default=X_C_PROXY_GRAD_TOL, help="gradient norm target")
    p.set_defaults(func=cmd_central)

    p = add("solve", "run solver trajectories and write trajectories.csv")
    p.add_argument("--force", action="store_true", help="run despite an invalid schedule")
    p.add_argument("--snapshot2d", action="store_true", help="also write trajectory2d.csv")
    p.set_defaults(func=cmd_solve)

    p = add("bench", "ensemble statistics or timing sweeps")
    p.add_argument("--mode", choices=("ensemble", "timing"), default="ensemble")
    p.add_argument("--force", action="store_true", help="run despite an invalid schedule")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for ensembles")
    p.add_argument("--record-at", type=_int_list, default=None, help="extra recording iterations")
    p.add_argument("--m-list", type=_int_list, default=None, help="constraint counts for timing")
    p.add_argument("--algorithms", type=_str_list, default=["sgd", "gd"], help="algorithms to time")
    p.add_argument("--seeds", type=_int_list, default=[0], help="run seeds per constraint count")
    p.add_argument("--budget-sgd", type=int, default=None, help="iteration budget override")
    p.add_argument("--budget-gd", type=int, default=None, help="iteration budget override")
    p.add_argument("--budget-pgd", type=int, default=None, help="iteration budget override")
    p.set_defaults(func=cmd_bench)

    p = add("verify", "run the bound suite and write bounds.csv")
    p.add_argument("--samples", type=int, default=1000, help="(x, k) samples per averaged bound")
    p.add_argument("--unbiased-points", type=int, default=100, help="points for unbiasedness")
    p.add_argument("--descent-states", type=int, default=200, help="trajectory states past k0")
    p.add_argument("--k-max", type=int, default=10**6, help="search budget for the threshold k0")
    p.add_argument("--radius", type=float, default=30.0, help="sampling ball radius around x*")
    p.add_argument("--grad-tol", type=float, default=1e-10, help="anchor solve tolerance")
    p.set_defaults(func=cmd_verify)

    p = add("plot-data", "emit the barrier-shape table (barrier.csv)")
    p.add_argument("--z-min", type=float, default=-3.0)
    p.add_argument("--z-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--deltas", type=_float_list, default=[1.0, 1e-2, 1e-6])
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
