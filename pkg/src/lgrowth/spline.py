"""Piecewise-linear ("broken stick") growth curves with fixed knots.

The latent trajectory is

    zeta(age) = b(age) . beta

where ``b`` is a hinge basis with one component per linear segment, so each
slope coefficient is the rate of change between consecutive knots and the
curve passes through zero at age 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing, positive knot ages."""

    xi: tuple[float, ...]

    def __post_init__(self):
        xi = tuple(float(k) for k in self.xi)
        if len(xi) < 1:
            raise ValueError("at least one knot is required")
        if not all(np.isfinite(k) and k > 0 for k in xi):
            raise ValueError(f"knots must be positive and finite, got {xi}")
        if any(b <= a for a, b in zip(xi, xi[1:])):
            raise ValueError(f"knots must be strictly increasing, got {xi}")
        object.__setattr__(self, "xi", xi)

    @property
    def K(self) -> int:
        return len(self.xi)

    @property
    def n_segments(self) -> int:
        return len(self.xi) + 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=float)


@dataclass(frozen=True)
class SlopeVector:
    """One slope per linear segment (``K + 1`` entries)."""

    beta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def check(self, knots: KnotVector) -> None:
        if len(self.beta) != knots.n_segments:
            raise ValueError(
                f"slope vector has {len(self.beta)} entries, "
                f"expected {knots.n_segments} for {knots.K} knots"
            )


def _as_knots(knots) -> KnotVector:
    return knots if isinstance(knots, KnotVector) else KnotVector(tuple(knots))


def basis_matrix(ages, knots) -> np.ndarray:
    """Hinge basis for many ages at once; shape ``(len(ages), K + 1)``.

    Row entries are ``b_0 = w - (w - xi_1)_+``,
    ``b_k = (w - xi_k)_+ - (w - xi_{k+1})_+`` and ``b_K = (w - xi_K)_+``.
    """
    knots = _as_knots(knots)
    w = np.atleast_1d(np.asarray(ages, dtype=float))
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("ages must be positive and finite")
    xi = knots.as_array()
    hinge = np.maximum(w[:, None] - xi[None, :], 0.0)
    out = np.empty((w.size, knots.n_segments))
    out[:, 0] = w - hinge[:, 0]
    out[:, 1:-1] = hinge[:, :-1] - hinge[:, 1:]
    out[:, -1] = hinge[:, -1]
    return out


def basis_vector(age: float, knots) -> np.ndarray:
    """Hinge basis ``b(age)`` of length ``K + 1``."""
    return basis_matrix([age], knots)[0]


def eval_trajectory(beta, knots, ages: Sequence[float]) -> np.ndarray:
    """Evaluate ``zeta(age) = b(age) . beta`` at each age."""
    knots = _as_knots(knots)
    beta = beta.beta if isinstance(beta, SlopeVector) else beta
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (knots.n_segments,):
        raise ValueError(
            f"slope vector has shape {beta.shape}, expected ({knots.n_segments},)"
        )
    return basis_matrix(ages, knots) @ beta
