"""Relaxed logarithmic barrier and the slope of its adaptation difference.

The barrier ``B(z, delta)`` is the ordinary log barrier ``-delta*log(-z)``
for ``z < -delta`` and a quadratic extension for ``z >= -delta``, so it is
globally defined, convex in ``z``, twice continuously differentiable, and
its second derivative never exceeds ``1/delta``.  Infeasible points incur
a finite (quadratically growing) penalty instead of an infinite one.

``c_slope`` is the derivative of the difference ``B(z, delta_inf) -
B(z, delta_k)`` between the fully tightened barrier and the current
relaxed one.  Its magnitude over the middle interval
``[-delta_k, -delta_inf)`` peaks at ``z = -sqrt(delta_k*delta_inf)``,
which is what ``c_slope_max_i2`` returns.

All functions are pure and accept scalars or numpy arrays in ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BarrierEval",
    "b_value",
    "b_slope",
    "b_curvature",
    "b_eval",
    "c_slope",
    "c_slope_max_i2",
]


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not delta > 0.0:
        raise ValueError(f"barrier parameter must be positive, got {delta}")
    return delta


def _check_delta_pair(delta_k: float, delta_inf: float) -> tuple[float, float]:
    delta_k = float(delta_k)
    delta_inf = _check_delta(delta_inf)
    if delta_k < delta_inf:
        raise ValueError(
            f"adapted barrier parameter delta_k={delta_k} must be >= delta_inf={delta_inf}"
        )
    return delta_k, delta_inf


@dataclass(frozen=True)
class BarrierEval:
    """Value, first, and second derivative of the barrier at one point."""

    value: float
    slope: float
    curvature: float


def b_value(z, delta: float):
    """Barrier value: ``-delta*log(-z)`` inside, quadratic extension at ``z >= -delta``."""
    delta = _check_delta(delta)
    z = np.asarray(z, dtype=np.float64)
    # At z == -delta both branches agree; the quadratic branch is used there.
    quad = 0.5 * ((z + 2.0 * delta) ** 2 / delta - delta) - delta * np.log(delta)
    log = -delta * np.log(np.where(z < -delta, -z, 1.0))
    out = np.where(z < -delta, log, quad)
    return out if out.ndim else float(out)


def b_slope(z, delta: float):
    """First derivative of the barrier in ``z``: ``-delta/z`` or ``(z + 2*delta)/delta``."""
    delta = _check_delta(delta)
    z = np.asarray(z, dtype=np.float64)
    out = np.where(z < -delta, -delta / np.where(z < -delta, z, -delta), (z + 2.0 * delta) / delta)
    return out if out.ndim else float(out)


def b_curvature(z, delta: float):
    """Second derivative of the barrier in ``z``: ``delta/z**2`` or ``1/delta``."""
    delta = _check_delta(delta)
    z = np.asarray(z, dtype=np.float64)
    out = np.where(z < -delta, delta / np.where(z < -delta, z, -delta) ** 2, 1.0 / delta)
    return out if out.ndim else float(out)


def b_eval(z: float, delta: float) -> BarrierEval:
    """Evaluate value, slope, and curvature at a single point."""
    return BarrierEval(b_value(z, delta), b_slope(z, delta), b_curvature(z, delta))


def c_slope(z, delta_k: float, delta_inf: float):
    """Derivative of the adaptation difference ``B(z, delta_inf) - B(z, delta_k)``.

    Piecewise in three intervals (``delta_k >= delta_inf``):

    * ``z < -delta_k``:             ``(delta_k - delta_inf)/z``
    * ``-delta_k <= z < -delta_inf``: ``-delta_inf/z - (z + 2*delta_k)/delta_k``
    * ``z >= -delta_inf``:          ``z*(delta_k - delta_inf)/(delta_k*delta_inf)``
    """
    delta_k, delta_inf = _check_delta_pair(delta_k, delta_inf)
    z = np.asarray(z, dtype=np.float64)
    gap = delta_k - delta_inf
    safe_z = np.where(z < -delta_inf, z, -1.0)  # log-branch denominators only
    inner = gap / safe_z
    middle = -delta_inf / safe_z - (z + 2.0 * delta_k) / delta_k
    outer = z * gap / (delta_k * delta_inf)
    out = np.where(z < -delta_k, inner, np.where(z < -delta_inf, middle, outer))
    return out if out.ndim else float(out)


def c_slope_max_i2(delta_k: float, delta_inf: float) -> float:
    """Maximum of ``|c_slope|`` over ``[-delta_k, -delta_inf)``.

    Attained at ``z = -sqrt(delta_k*delta_inf)`` and equal to
    ``2 - 2*sqrt(delta_inf/delta_k)``.
    """
    delta_k, delta_inf = _check_delta_pair(delta_k, delta_inf)
    return 2.0 - 2.0 * np.sqrt(delta_inf / delta_k)
