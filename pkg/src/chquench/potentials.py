"""Logarithmic barrier potential, smooth polynomial parts and quench scalings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "DomainError",
    "LogPotential",
    "SmoothPotential",
    "QuenchScaling",
    "Potentials",
    "log_h",
    "smooth_eval",
    "quench",
]


class DomainError(ValueError):
    """Raised when the logarithmic potential is evaluated outside (-1, 1)."""


def _check_open_interval(y: np.ndarray) -> None:
    if not np.all(np.abs(y) < 1.0):
        bad = float(np.max(np.abs(y)))
        raise DomainError(f"logarithmic potential needs |y| < 1, got max |y| = {bad!r}")


@dataclass(frozen=True)
class LogPotential:
    """h(y) = c ((1+y) ln(1+y) + (1-y) ln(1-y)) on (-1, 1)."""

    c_hat: float = 1.0

    def __post_init__(self):
        if not self.c_hat > 0:
            raise ValueError(f"c_hat must be positive, got {self.c_hat}")

    def value(self, y):
        y = np.asarray(y, dtype=float)
        _check_open_interval(y)
        return self.c_hat * ((1 + y) * np.log1p(y) + (1 - y) * np.log1p(-y))

    def first(self, y):
        y = np.asarray(y, dtype=float)
        _check_open_interval(y)
        return self.c_hat * (np.log1p(y) - np.log1p(-y))

    def second(self, y):
        y = np.asarray(y, dtype=float)
        _check_open_interval(y)
        return 2.0 * self.c_hat / ((1.0 - y) * (1.0 + y))

    def __call__(self, y):
        return self.value(y), self.first(y), self.second(y)


def log_h(y, c_hat: float = 1.0):
    """Value, first and second derivative of the logarithmic potential."""
    return LogPotential(c_hat)(y)


@dataclass(frozen=True)
class SmoothPotential:
    """Polynomial smooth parts of the bulk and surface free energies.

    Coefficients are in ascending order; the default ``(0.5, 0, -0.5)`` is
    ``(1 - y^2) / 2`` for both.
    """

    bulk: tuple[float, ...] = (0.5, 0.0, -0.5)
    surface: tuple[float, ...] = (0.5, 0.0, -0.5)

    def __post_init__(self):
        object.__setattr__(self, "bulk", tuple(float(c) for c in self.bulk))
        object.__setattr__(self, "surface", tuple(float(c) for c in self.surface))

    def coefficients(self, which: str) -> np.ndarray:
        if which not in ("bulk", "surface"):
            raise ValueError(f"which must be 'bulk' or 'surface', got {which!r}")
        return np.asarray(getattr(self, which))

    def value(self, which, y):
        return P.polyval(y, self.coefficients(which))

    def first(self, which, y):
        return P.polyval(y, P.polyder(self.coefficients(which)))

    def second(self, which, y):
        return P.polyval(y, P.polyder(self.coefficients(which), 2))

    def third(self, which, y):
        return P.polyval(y, P.polyder(self.coefficients(which), 3))


def smooth_eval(which: str, y, potential: SmoothPotential | None = None):
    """(value, first, second) of f2 (``which='bulk'``) or g2 (``'surface'``).

    Arguments outside [-1, 1] are evaluated; :func:`outside_obstacle` flags them.
    """
    potential = potential or SmoothPotential()
    return (potential.value(which, y), potential.first(which, y),
            potential.second(which, y))


def outside_obstacle(y) -> bool:
    return bool(np.any(np.abs(np.asarray(y)) > 1.0))


@dataclass(frozen=True)
class QuenchScaling:
    """phi(alpha) = alpha**p_phi and psi(alpha) = alpha**p_psi."""

    p_phi: float = 1.0
    p_psi: float = 1.0
    c_phipsi: float = 1.0

    def __post_init__(self):
        if not (self.p_phi > 0 and self.p_psi > 0):
            raise ValueError("quench exponents must be positive")
        if self.c_phipsi <= 0:
            raise ValueError("c_phipsi must be positive")
        # phi <= C psi on (0, 1] needs p_phi >= p_psi, and then C >= 1 suffices
        if self.p_phi < self.p_psi or self.c_phipsi < 1.0:
            raise ValueError(
                "phi(alpha) <= C_phipsi psi(alpha) fails on (0,1]: need "
                "p_phi >= p_psi and C_phipsi >= 1"
            )

    def __call__(self, alpha: float) -> tuple[float, float]:
        return quench(alpha, self.p_phi, self.p_psi)


def quench(alpha: float, p_phi: float = 1.0, p_psi: float | None = None):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    if p_psi is None:
        p_psi = p_phi
    return float(alpha) ** p_phi, float(alpha) ** p_psi


@dataclass(frozen=True)
class Potentials:
    """Everything the state equations need to evaluate the free energy."""

    log: LogPotential = LogPotential()
    smooth: SmoothPotential = SmoothPotential()
    scaling: QuenchScaling = QuenchScaling()

    def bulk_derivative(self, alpha, y):
        phi, _ = self.scaling(alpha)
        return phi * self.log.first(y) + self.smooth.first("bulk", y)

    def bulk_second(self, alpha, y):
        phi, _ = self.scaling(alpha)
        return phi * self.log.second(y) + self.smooth.second("bulk", y)

    def surface_derivative(self, alpha, y):
        _, psi = self.scaling(alpha)
        return psi * self.log.first(y) + self.smooth.first("surface", y)

    def surface_second(self, alpha, y):
        _, psi = self.scaling(alpha)
        return psi * self.log.second(y) + self.smooth.second("surface", y)
