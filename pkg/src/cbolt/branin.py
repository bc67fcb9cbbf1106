"""Constrained Branin-Hoo benchmark: objective, disk constraint, coupled evaluation."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

_A = 1.0
_B = 5.1 / (4.0 * math.pi**2)
_C = 5.0 / math.pi
_R = 6.0
_S = 10.0
_T = 1.0 / (8.0 * math.pi)

GLOBAL_MINIMA = (
    (-math.pi, 12.275),
    (math.pi, 2.275),
    (9.42478, 2.475),
)
GLOBAL_MINIMUM_VALUE = 0.397887


def branin(x1: float, x2: float) -> float:
    """Branin-Hoo objective with the standard parameterization."""
    return float(
        _A * (x2 - _B * x1**2 + _C * x1 - _R) ** 2
        + _S * (1.0 - _T) * math.cos(x1)
        + _S
    )


def disk_constraint(x1: float, x2: float) -> bool:
    """True iff (x1, x2) lies inside the feasible disk."""
    return (x1 - 2.5) ** 2 + (x2 - 7.5) ** 2 <= 50.0


def coupled_evaluate(x1: float, x2: float) -> tuple[float, bool]:
    """Noise-free joint evaluation of objective and constraint."""
    return branin(x1, x2), disk_constraint(x1, x2)


@dataclasses.dataclass(frozen=True)
class BraninProblem:
    """Problem interface consumed by the BO engine. All fields are fixed."""

    disk_center: tuple[float, float] = (2.5, 7.5)
    disk_radius_sq: float = 50.0

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[-5.0, 10.0], [0.0, 15.0]])

    def evaluate(self, z: np.ndarray) -> tuple[float, bool]:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape != (2,):
            raise ValueError(f"expected a 2-d point, got shape {z.shape}")
        return coupled_evaluate(float(z[0]), float(z[1]))


def _assert_elimination_pattern() -> None:
    # The disk must keep exactly one of the three global minima feasible,
    # and that one must be (pi, 2.275).
    flags = [disk_constraint(x1, x2) for x1, x2 in GLOBAL_MINIMA]
    if flags != [False, True, False]:
        raise AssertionError(
            f"disk parameters do not reproduce the expected feasibility "
            f"pattern over the global minima: {flags}"
        )


_assert_elimination_pattern()
