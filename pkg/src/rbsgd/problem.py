"""Problem model: finite-sum objective, affine constraints, and the
ellipsoid-halfspace benchmark generator.

The objective is a mean of ``n`` components, each a sum over coordinates
of a logistic term plus a quadratic centering term::

    f_i(x) = sum_j  alpha[i,j]*x_j + log(1 + exp(-alpha[i,j]*x_j)) + (x_j - beta)**2

Every component Hessian is diagonal with entries in ``[2, 2 + alpha**2/4]``,
so the mean objective is 2-strongly convex and each component gradient is
Lipschitz with constant ``2 + max(alpha)**2/4``.

Constraints are halfspaces ``a_j . x + b_j <= 0``.  The generator samples
supporting halfspaces of an axis-aligned ellipsoid, giving a feasible set
with non-empty interior (the origin is strictly feasible) for any number
of constraints, and calibrates ``beta`` so the unconstrained minimizer has
a prescribed norm.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Optional

import numpy as np
from scipy.special import expit

__all__ = [
    "AffineConstraintSet",
    "FiniteSumObjective",
    "Problem",
    "GenerationError",
    "generate_ellipsoid_problem",
    "smoothness_constants",
    "save_problem",
    "load_problem",
]


class GenerationError(RuntimeError):
    """Raised when problem generation cannot meet its calibration target."""


def _as_matrix(arr, name: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    return out


@dataclass(frozen=True)
class AffineConstraintSet:
    """Halfspace constraints ``normals[j] . x + offsets[j] <= 0``."""

    normals: np.ndarray  # (m, d)
    offsets: np.ndarray  # (m,)

    def __post_init__(self) -> None:
        normals = _as_matrix(self.normals, "normals")
        offsets = np.ascontiguousarray(self.offsets, dtype=np.float64)
        if offsets.ndim != 1 or offsets.shape[0] != normals.shape[0]:
            raise ValueError(
                f"offsets shape {offsets.shape} does not match {normals.shape[0]} constraints"
            )
        if not np.all(np.isfinite(offsets)):
            raise ValueError("offsets must be finite")
        if normals.shape[0] < 1 or normals.shape[1] < 1:
            raise ValueError("need at least one constraint and one dimension")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def m(self) -> int:
        return self.normals.shape[0]

    @property
    def d(self) -> int:
        return self.normals.shape[1]

    @cached_property
    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.normals, axis=1)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """All constraint values ``a_j . x + b_j`` at once."""
        return self.normals @ x + self.offsets

    def value(self, j: int, x: np.ndarray) -> float:
        if not 0 <= j < self.m:
            raise IndexError(f"constraint index {j} out of range(0, {self.m})")
        return float(self.normals[j] @ x + self.offsets[j])

    def max_violation(self, x: np.ndarray) -> float:
        """``max_j max(0, a_j . x + b_j)``; zero iff ``x`` is feasible."""
        return float(max(0.0, np.max(self.residuals(x))))


@dataclass(frozen=True)
class FiniteSumObjective:
    """Mean of ``n`` logistic-quadratic components with centering ``beta``."""

    alphas: np.ndarray  # (n, d), all > 0
    beta: float

    def __post_init__(self) -> None:
        alphas = _as_matrix(self.alphas, "alphas")
        if np.any(alphas <= 0.0):
            raise ValueError("all alpha coefficients must be positive")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return self.alphas.shape[0]

    @property
    def d(self) -> int:
        return self.alphas.shape[1]

    @property
    def mu(self) -> float:
        """Strong-convexity modulus of the mean objective."""
        return 2.0

    @property
    def lipschitz(self) -> float:
        """Gradient Lipschitz constant valid for every component."""
        return 2.0 + 0.25 * float(np.max(self.alphas)) ** 2

    def _check_index(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range(0, {self.n})")
        return i

    def component_value(self, i: int, x: np.ndarray) -> float:
        i = self._check_index(i)
        t = self.alphas[i] * x
        return float(np.sum(t + np.logaddexp(0.0, -t) + (x - self.beta) ** 2))

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        i = self._check_index(i)
        a = self.alphas[i]
        return a * expit(a * x) + 2.0 * (x - self.beta)

    def component_grads(self, x: np.ndarray) -> np.ndarray:
        """Stack of all component gradients, shape ``(n, d)``."""
        t = self.alphas * x
        return self.alphas * expit(t) + 2.0 * (x - self.beta)

    def value(self, x: np.ndarray) -> float:
        t = self.alphas * x
        logistic = float(np.sum(t + np.logaddexp(0.0, -t))) / self.n
        return logistic + float(np.sum((x - self.beta) ** 2))

    def grad(self, x: np.ndarray) -> np.ndarray:
        t = self.alphas * x
        return np.mean(self.alphas * expit(t), axis=0) + 2.0 * (x - self.beta)

    def unconstrained_minimizer(self, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
        """Coordinate-wise Newton solve of ``grad(x) = 0`` (the problem separates)."""
        x = np.full(self.d, self.beta)
        for _ in range(max_iter):
            t = self.alphas * x
            s = expit(t)
            g = np.mean(self.alphas * s, axis=0) + 2.0 * (x - self.beta)
            h = np.mean(self.alphas**2 * s * (1.0 - s), axis=0) + 2.0
            x = x - g / h
            if np.max(np.abs(g)) < tol:
                break
        return x


@dataclass(frozen=True)
class Problem:
    """Constrained finite-sum problem plus generation metadata."""

    objective: FiniteSumObjective
    constraints: AffineConstraintSet
    label: str = ""
    seed: Optional[int] = None
    radius2: Optional[float] = None
    q_diag: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.objective.d != self.constraints.d:
            raise ValueError(
                f"objective dimension {self.objective.d} != constraint dimension {self.constraints.d}"
            )
        if self.q_diag is not None:
            q = np.ascontiguousarray(self.q_diag, dtype=np.float64)
            if q.shape != (self.objective.d,):
                raise ValueError(f"q_diag shape {q.shape} != ({self.objective.d},)")
            object.__setattr__(self, "q_diag", q)

    @property
    def d(self) -> int:
        return self.objective.d

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def m(self) -> int:
        return self.constraints.m

    def component_value(self, i: int, x: np.ndarray) -> float:
        return self.objective.component_value(i, x)

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.objective.component_grad(i, x)

    def constraint_value(self, j: int, x: np.ndarray) -> float:
        return self.constraints.value(j, x)

    def max_violation(self, x: np.ndarray) -> float:
        return self.constraints.max_violation(x)


def smoothness_constants(problem: Problem) -> tuple[float, float]:
    """(strong-convexity modulus, per-component gradient Lipschitz constant)."""
    return problem.objective.mu, problem.objective.lipschitz


def _calibrate_beta(
    alphas: np.ndarray, target_norm: float, rel_tol: float = 0.005, max_steps: int = 200
) -> float:
    """Bisection on beta so the unconstrained minimizer norm hits the target.

    The minimizer norm is monotone increasing in beta for beta >= 0 (each
    coordinate of the minimizer increases), so plain bisection applies.
    """

    def norm_at(beta: float) -> float:
        return float(np.linalg.norm(FiniteSumObjective(alphas, beta).unconstrained_minimizer()))

    lo, hi = 0.0, 1.0
    steps = 0
    while norm_at(hi) < target_norm:
        hi *= 2.0
        steps += 1
        if steps > 60:
            raise GenerationError(f"could not bracket target norm {target_norm}")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        err = norm_at(mid) - target_norm
        if abs(err) <= rel_tol * target_norm:
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"beta bisection did not reach {rel_tol:.1%} of target norm {target_norm} "
        f"within {max_steps} steps"
    )


def generate_ellipsoid_problem(
    d: int,
    m: int,
    n: int,
    seed: int,
    radius2: float = 100.0,
    q_range: tuple[float, float] = (1.0, 1.5),
    alpha_range: tuple[float, float] = (0.5, 2.0),
    target_norm: float = 15.0,
) -> Problem:
    """Sample the ellipsoid-halfspace benchmark instance.

    Constraints are supporting halfspaces of ``{x : x.Q.x <= radius2}`` at
    ``m`` boundary points with uniformly random directions, so the origin is
    strictly feasible for any ``m``.  The objective's ``beta`` is calibrated
    by bisection so the unconstrained minimizer norm is within 1% of
    ``target_norm``.  The same seed reproduces the problem bit for bit.
    """
    if d < 1 or m < 1 or n < 1:
        raise ValueError(f"d, m, n must all be >= 1, got d={d}, m={m}, n={n}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    q = rng.uniform(q_range[0], q_range[1], size=d)

    # Uniform directions via normalized Gaussians, scaled onto the boundary.
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    scale = np.sqrt(radius2 / np.einsum("md,d,md->m", u, q, u))
    boundary = u * scale[:, None]
    normals = boundary * q  # rows Q @ y_j
    offsets = np.full(m, -radius2)

    alphas = rng.uniform(alpha_range[0], alpha_range[1], size=(n, d))
    beta = _calibrate_beta(alphas, target_norm)

    return Problem(
        objective=FiniteSumObjective(alphas, beta),
        constraints=AffineConstraintSet(normals, offsets),
        label=f"ellipsoid-d{d}-m{m}-n{n}-seed{seed}",
        seed=seed,
        radius2=radius2,
        q_diag=q,
    )


_MAGIC = b"RBSGD-PROBLEM-v1\n"


def save_problem(problem: Problem, path_or_file) -> None:
    """Write a problem to a self-describing binary container.

    A JSON header records scalars and the array manifest; array payloads
    are raw little-endian float64 in manifest order.  Round-trips are
    bit-exact and identical problems serialize to identical bytes.
    """
    arrays: list[tuple[str, np.ndarray]] = [
        ("normals", problem.constraints.normals),
        ("offsets", problem.constraints.offsets),
        ("alphas", problem.objective.alphas),
    ]
    if problem.q_diag is not None:
        arrays.append(("q_diag", problem.q_diag))
    header = {
        "d": problem.d,
        "m": problem.m,
        "n": problem.n,
        "label": problem.label,
        "seed": problem.seed,
        "radius2": problem.radius2,
        "beta": problem.objective.beta,
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
    }
    payload = json.dumps(header, sort_keys=True).encode() + b"\n"

    def write(f: BinaryIO) -> None:
        f.write(_MAGIC)
        f.write(payload)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "wb") as f:
            write(f)


def load_problem(path_or_file) -> Problem:
    """Read a problem written by :func:`save_problem`."""

    def read(f: BinaryIO) -> Problem:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a problem container (bad magic)")
        header = json.loads(f.readline().decode())
        data: dict[str, np.ndarray] = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape))
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated payload for array {name!r}")
            data[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return Problem(
            objective=FiniteSumObjective(data["alphas"], header["beta"]),
            constraints=AffineConstraintSet(data["normals"], data["offsets"]),
            label=header["label"],
            seed=header["seed"],
            radius2=header["radius2"],
            q_diag=data.get("q_diag"),
        )

    if hasattr(path_or_file, "read"):
        return read(path_or_file)
    with open(path_or_file, "rb") as f:
        return read(f)


def problem_bytes(problem: Problem) -> bytes:
    """Serialized form of a problem, for hashing and determinism checks."""
    buf = io.BytesIO()
    save_problem(problem, buf)
    return buf.getvalue()
