"""Closed-form facts about the pendulum factor H_p = r1^2/2 + eps*(cos th1 - 1).

The saddle sits at (th1, r1) = (0, 0) with eigenvalues +-sqrt(eps) and
eigenvectors (1, +-sqrt(eps)).  The zero-energy level through it is the
separatrix; the upper branch is r1 = 2*sqrt(eps)*sin(th1/2) and carries the
homoclinic time parameterization th1(t) = 4*arctan(exp(sqrt(eps)*t)).

Everything here is ground truth for the mu = 0 product system: manifolds,
chart and splitting tests are checked against these formulas.  The lower
branch follows from the symmetry (th1, r1) -> (2*pi - th1, -r1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pendulum_energy(theta1, r1, epsilon: float):
    """H_p, the pendulum factor of the full Hamiltonian."""
    return 0.5 * np.asarray(r1) ** 2 + epsilon * (np.cos(theta1) - 1.0)


def separatrix_r1(theta1, epsilon: float):
    """Upper-branch separatrix: r1 = 2*sqrt(eps)*sin(th1/2) for th1 in (0, 2*pi)."""
    return 2.0 * np.sqrt(epsilon) * np.sin(np.asarray(theta1, dtype=float) / 2.0)


def separatrix_time_param(t, epsilon: float):
    """Homoclinic solution with th1(0) = pi.

    Returns (th1(t), r1(t)) = (4*arctan(e^{sqrt(eps) t}), 2*sqrt(eps)*sech(sqrt(eps) t));
    satisfies th1' = r1 and r1' = eps*sin(th1) identically.
    """
    se = np.sqrt(epsilon)
    u = se * np.asarray(t, dtype=float)
    theta1 = 4.0 * np.arctan(np.exp(u))
    r1 = 2.0 * se / np.cosh(u)
    return theta1, r1


@dataclass(frozen=True)
class SaddleFrame:
    """Eigen data of the pendulum saddle for the time-2*pi map."""

    epsilon: float
    vectors: np.ndarray      # columns: unstable then stable, in (th1, r1)
    multipliers: np.ndarray  # (e^{+2 pi sqrt(eps)}, e^{-2 pi sqrt(eps)})
    exponents: np.ndarray    # (+sqrt(eps), -sqrt(eps))

    @property
    def e_unstable(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def e_stable(self) -> np.ndarray:
        return self.vectors[:, 1]


def saddle_frame(epsilon: float) -> SaddleFrame:
    """Saddle linearization data: eigenvectors (1, +-sqrt(eps)), multipliers e^{+-2 pi sqrt(eps)}."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    se = np.sqrt(epsilon)
    vectors = np.array([[1.0, 1.0], [se, -se]])
    mult = np.array([np.exp(2.0 * np.pi * se), np.exp(-2.0 * np.pi * se)])
    return SaddleFrame(epsilon, vectors, mult, np.array([se, -se]))


def linearized_period_map(epsilon: float) -> np.ndarray:
    """Exact time-2*pi map of the saddle linearization th1' = r1, r1' = eps*th1."""
    se = np.sqrt(epsilon)
    c, s = np.cosh(2.0 * np.pi * se), np.sinh(2.0 * np.pi * se)
    return np.array([[c, s / se], [se * s, c]])
