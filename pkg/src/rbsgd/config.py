"""Strict TOML run-configuration loading.

One file describes a whole run: the problem instance, the solver and its
schedules, the ensemble layout, and the output directory.  Parsing is
strict: unknown keys anywhere are rejected (a typo in a schedule exponent
must fail loudly, not silently change convergence behavior), and every
value is type-checked.  See ``configs/sec3.toml`` for an annotated example.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from rbsgd.bench import SolverSpec
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Configuration file is malformed, has unknown keys, or bad values."""


@dataclass(frozen=True)
class ProblemConfig:
    d: int
    m: int
    n: int
    seed: int
    radius2: float = 100.0
    q_range: tuple[float, float] = (1.0, 1.5)
    alpha_range: tuple[float, float] = (0.5, 2.0)
    target_norm: float = 15.0


@dataclass(frozen=True)
class StopConfig:
    mode: str = "budget"  # budget | tolerance
    tol: float = 0.01
    stride: int = 10


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "sgd"
    gamma_c: float = 0.3
    gamma_p: float = 0.8
    epsilon_c: float = 5.0
    epsilon_q: float = 0.3
    delta_inf: float = 1e-6
    step: float = 1e-2
    budget: int = 20_000
    batch: tuple[int, int] = (1, 1)
    stop: StopConfig = field(default_factory=StopConfig)
    x0: Optional[tuple[float, ...]] = None  # None means the origin

    def spec(self) -> SolverSpec:
        return SolverSpec(
            algorithm=self.algorithm,
            gamma=PowerLawSchedule(self.gamma_c, self.gamma_p),
            barrier=BarrierSchedule(self.delta_inf, PowerLawSchedule(self.epsilon_c, self.epsilon_q)),
            step=self.step,
            budget=self.budget,
            batch=self.batch,
            stop_tol=self.stop.tol,
            stop_stride=self.stop.stride,
        )

    def x0_vector(self, d: int) -> Optional[np.ndarray]:
        if self.x0 is None:
            return None
        vec = np.asarray(self.x0, dtype=np.float64)
        if vec.shape != (d,):
            raise ConfigError(f"solver.x0 has {vec.size} entries, problem dimension is {d}")
        return vec


@dataclass(frozen=True)
class RunsConfig:
    trajectories: int = 1
    record_stride: int = 0  # 0 selects the geometric grid
    master_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    runs: RunsConfig = field(default_factory=RunsConfig)
    output_dir: str = "out"


def _want_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def _want_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    return value


def _want_str(value: Any, path: str, options: Optional[tuple[str, ...]] = None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}")
    if options and value not in options:
        raise ConfigError(f"{path} must be one of {options}, got {value!r}")
    return value


def _want_pair(value: Any, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path} must be a pair of numbers")
    return (_want_float(value[0], path), _want_float(value[1], path))


def _check_keys(data: dict, allowed: set[str], path: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {', '.join(sorted(unknown))}")


def _parse_problem(data: dict) -> ProblemConfig:
    _check_keys(
        data, {"d", "m", "n", "seed", "radius2", "q_range", "alpha_range", "target_norm"}, "problem"
    )
    for key in ("d", "m", "n", "seed"):
        if key not in data:
            raise ConfigError(f"problem.{key} is required")
    cfg = ProblemConfig(
        d=_want_int(data["d"], "problem.d"),
        m=_want_int(data["m"], "problem.m"),
        n=_want_int(data["n"], "problem.n"),
        seed=_want_int(data["seed"], "problem.seed"),
        radius2=_want_float(data.get("radius2", 100.0), "problem.radius2"),
        q_range=_want_pair(data.get("q_range", (1.0, 1.5)), "problem.q_range"),
        alpha_range=_want_pair(data.get("alpha_range", (0.5, 2.0)), "problem.alpha_range"),
        target_norm=_want_float(data.get("target_norm", 15.0), "problem.target_norm"),
    )
    if cfg.d < 1:
        raise ConfigError("problem.d: d >= 1 required")
    if cfg.m < 1:
        raise ConfigError("problem.m: m >= 1 required")
    if cfg.n < 1:
        raise ConfigError("problem.n: n >= 1 required")
    return cfg


def _parse_schedule_pair(data: dict, path: str, keys: tuple[str, str]) -> tuple[float, float]:
    _check_keys(data, set(keys), path)
    return (
        _want_float(data.get(keys[0], 0.0), f"{path}.{keys[0]}"),
        _want_float(data.get(keys[1], 0.0), f"{path}.{keys[1]}"),
    )


def _parse_solver(data: dict) -> SolverConfig:
    _check_keys(
        data,
        {"algorithm", "gamma", "epsilon", "delta_inf", "step", "budget", "batch", "stop", "x0"},
        "solver",
    )
    defaults = SolverConfig()
    gamma_c, gamma_p = defaults.gamma_c, defaults.gamma_p
    if "gamma" in data:
        gamma_c, gamma_p = _parse_schedule_pair(data["gamma"], "solver.gamma", ("c", "p"))
    eps_c, eps_q = defaults.epsilon_c, defaults.epsilon_q
    if "epsilon" in data:
        eps_c, eps_q = _parse_schedule_pair(data["epsilon"], "solver.epsilon", ("c", "q"))
    batch = defaults.batch
    if "batch" in data:
        _check_keys(data["batch"], {"bi", "bj"}, "solver.batch")
        batch = (
            _want_int(data["batch"].get("bi", 1), "solver.batch.bi"),
            _want_int(data["batch"].get("bj", 1), "solver.batch.bj"),
        )
        if batch[0] < 1 or batch[1] < 1:
            raise ConfigError("solver.batch: batch sizes must be >= 1")
    stop = StopConfig()
    if "stop" in data:
        _check_keys(data["stop"], {"mode", "tol", "stride"}, "solver.stop")
        stop = StopConfig(
            mode=_want_str(data["stop"].get("mode", "budget"), "solver.stop.mode", ("budget", "tolerance")),
            tol=_want_float(data["stop"].get("tol", 0.01), "solver.stop.tol"),
            stride=_want_int(data["stop"].get("stride", 10), "solver.stop.stride"),
        )
        if stop.stride < 1:
            raise ConfigError("solver.stop.stride must be >= 1")
    x0 = None
    if "x0" in data:
        raw = data["x0"]
        if isinstance(raw, str):
            if raw != "origin":
                raise ConfigError("solver.x0 must be 'origin' or a list of numbers")
        else:
            if not isinstance(raw, list) or not raw:
                raise ConfigError("solver.x0 must be 'origin' or a non-empty list of numbers")
            x0 = tuple(_want_float(v, "solver.x0") for v in raw)
    cfg = SolverConfig(
        algorithm=_want_str(data.get("algorithm", "sgd"), "solver.algorithm", ("sgd", "gd", "pgd")),
        gamma_c=gamma_c,
        gamma_p=gamma_p,
        epsilon_c=eps_c,
        epsilon_q=eps_q,
        delta_inf=_want_float(data.get("delta_inf", 1e-6), "solver.delta_inf"),
        step=_want_float(data.get("step", 1e-2), "solver.step"),
        budget=_want_int(data.get("budget", 20_000), "solver.budget"),
        batch=batch,
        stop=stop,
        x0=x0,
    )
    if cfg.delta_inf <= 0:
        raise ConfigError("solver.delta_inf must be positive")
    if cfg.budget < 0:
        raise ConfigError("solver.budget must be >= 0")
    return cfg


def _parse_runs(data: dict) -> RunsConfig:
    _check_keys(data, {"trajectories", "record_stride", "master_seed"}, "runs")
    cfg = RunsConfig(
        trajectories=_want_int(data.get("trajectories", 1), "runs.trajectories"),
        record_stride=_want_int(data.get("record_stride", 0), "runs.record_stride"),
        master_seed=_want_int(data.get("master_seed", 0), "runs.master_seed"),
    )
    if cfg.trajectories < 1:
        raise ConfigError("runs.trajectories must be >= 1")
    if cfg.record_stride < 0:
        raise ConfigError("runs.record_stride must be >= 0")
    return cfg


def load_config(path) -> RunConfig:
    """Load and validate a TOML run configuration."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")

    _check_keys(data, {"problem", "solver", "runs", "output"}, "config")
    if "problem" not in data:
        raise ConfigError("a [problem] section is required")
    output_dir = "out"
    if "output" in data:
        _check_keys(data["output"], {"directory"}, "output")
        output_dir = _want_str(data["output"].get("directory", "out"), "output.directory")
    return RunConfig(
        problem=_parse_problem(data["problem"]),
        solver=_parse_solver(data.get("solver", {})),
        runs=_parse_runs(data.get("runs", {})),
        output_dir=output_dir,
    )
