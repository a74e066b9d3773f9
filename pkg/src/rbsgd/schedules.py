"""Power-law step-size and barrier-adaptation schedules.

A run is driven by two sequences indexed from ``k = 1``: the step size
``gamma_k = c * k**-p`` and the barrier gap ``epsilon_k = c_eps * k**-q``,
with the barrier parameter ``delta_k = delta_inf + epsilon_k`` bounded
below by ``delta_inf > 0``.  Almost-sure convergence of the stochastic
update requires three summability conditions, which for power laws reduce
to exact exponent tests:

* divergence of the step sums        <=>  p <= 1
* summability of squared steps       <=>  2p > 1
* summability of step*gap products   <=>  p + q > 1

``validate`` applies those tests; non-power-law sequences can be passed
through the solver but their validity is reported as unknown.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

__all__ = ["PowerLawSchedule", "BarrierSchedule", "ValidityReport", "validate"]


def _check_index(k: int) -> int:
    k = int(k)
    if k < 1:
        raise IndexError(f"schedule index starts at 1, got k={k}")
    return k


@dataclass(frozen=True)
class PowerLawSchedule:
    """Sequence ``c * k**-p`` for ``k >= 1``.

    ``coefficient == 0`` is allowed and freezes the sequence at zero
    (used for a constant barrier); ``exponent == 0`` gives a constant
    sequence.
    """

    coefficient: float
    exponent: float

    def __post_init__(self) -> None:
        if self.coefficient < 0:
            raise ValueError(f"coefficient must be >= 0, got {self.coefficient}")
        if self.exponent < 0:
            raise ValueError(f"exponent must be >= 0, got {self.exponent}")

    def __call__(self, k: int) -> float:
        k = _check_index(k)
        return self.coefficient * float(k) ** -self.exponent


def gamma(schedule: PowerLawSchedule, k: int) -> float:
    """Step size at iteration ``k >= 1``."""
    return schedule(k)


@dataclass(frozen=True)
class BarrierSchedule:
    """Barrier parameter ``delta_k = delta_inf + epsilon_k``, ``delta_inf > 0``."""

    delta_inf: float
    epsilon: PowerLawSchedule

    def __post_init__(self) -> None:
        if not self.delta_inf > 0:
            raise ValueError(f"delta_inf must be positive, got {self.delta_inf}")

    def delta(self, k: int) -> float:
        return self.delta_inf + self.epsilon(_check_index(k))

    @staticmethod
    def frozen(delta: float) -> "BarrierSchedule":
        """Constant barrier at ``delta`` (zero adaptation gap)."""
        return BarrierSchedule(delta_inf=delta, epsilon=PowerLawSchedule(0.0, 0.0))


def delta(schedule: BarrierSchedule, k: int) -> float:
    """Barrier parameter at iteration ``k >= 1``."""
    return schedule.delta(k)


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of the three summability tests.

    Fields are ``None`` when the schedule is not a power law and the
    test outcome is unknown.
    """

    cond_a: Optional[bool]  # step sums diverge
    cond_b: Optional[bool]  # squared steps summable
    cond_c: Optional[bool]  # step*gap products summable

    @property
    def valid(self) -> Optional[bool]:
        conds = (self.cond_a, self.cond_b, self.cond_c)
        if any(c is None for c in conds):
            return None
        return all(conds)

    def describe(self) -> str:
        names = {
            "cond_a": "sum(gamma) = inf",
            "cond_b": "sum(gamma^2) < inf",
            "cond_c": "sum(gamma*eps) < inf",
        }
        parts = []
        for field, label in names.items():
            val = getattr(self, field)
            parts.append(f"{label}: {'?' if val is None else ('ok' if val else 'FAIL')}")
        return "; ".join(parts)


def validate(gamma: object, epsilon: object) -> ValidityReport:
    """Test the summability conditions for a (step, gap) schedule pair.

    For power laws the tests are exact exponent comparisons.  Any other
    schedule object yields an all-unknown report: callers must opt in
    explicitly to run with it.
    """
    if not isinstance(gamma, PowerLawSchedule) or not isinstance(epsilon, PowerLawSchedule):
        return ValidityReport(None, None, None)
    if gamma.coefficient == 0.0:
        # Zero steps: the divergence condition can never hold.
        return ValidityReport(False, True, True)
    cond_a = gamma.exponent <= 1.0
    cond_b = 2.0 * gamma.exponent > 1.0
    # A frozen gap (coefficient 0) makes every product term vanish.
    cond_c = epsilon.coefficient == 0.0 or gamma.exponent + epsilon.exponent > 1.0
    return ValidityReport(cond_a, cond_b, cond_c)
