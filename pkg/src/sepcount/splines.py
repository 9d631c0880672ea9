"""Clamped B-spline bases on equidistant knots and difference penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class SplineBasisSpec:
    """Basis of ``q`` B-splines of a given degree on ``[t_min, t_max]``.

    The knot vector repeats each boundary ``degree + 1`` times and places
    ``q - degree - 1`` equidistant interior knots, so the basis forms a
    partition of unity on the closed domain.
    """

    t_min: float
    t_max: float
    q: int = 20
    degree: int = 3
    penalty_order: int = 2

    def __post_init__(self):
        if not self.t_max > self.t_min:
            raise ValueError("spline domain must satisfy t_max > t_min")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.penalty_order < 1:
            raise ValueError("penalty_order must be >= 1")
        if self.q < self.degree + 1:
            raise ValueError(f"q={self.q} too small for degree {self.degree}")
        if self.q < self.penalty_order + 1:
            raise ValueError(f"q={self.q} must exceed the penalty order {self.penalty_order}")

    @property
    def knots(self) -> np.ndarray:
        d = self.degree
        inner = np.linspace(self.t_min, self.t_max, self.q - d + 1)
        return np.concatenate([np.full(d, self.t_min), inner, np.full(d, self.t_max)])

    def with_domain(self, t_min: float, t_max: float) -> SplineBasisSpec:
        return SplineBasisSpec(t_min, t_max, self.q, self.degree, self.penalty_order)


def basis_matrix(spec: SplineBasisSpec, t) -> np.ndarray:
    """Evaluate all ``q`` basis functions at each point of ``t``.

    Returns an array of shape ``(len(t), q)``. Points outside the domain
    raise instead of extrapolating.
    """
    x = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(~np.isfinite(x)) or np.any(x < spec.t_min) or np.any(x > spec.t_max):
        bad = x[~((x >= spec.t_min) & (x <= spec.t_max))]
        raise ValueError(f"t={bad[0]!r} outside spline domain [{spec.t_min}, {spec.t_max}]")
    return BSpline.design_matrix(x, spec.knots, spec.degree).toarray()


def basis_row(spec: SplineBasisSpec, t: float) -> np.ndarray:
    return basis_matrix(spec, [t])[0]


def difference_operator(q: int, order: int) -> np.ndarray:
    if order < 1 or q <= order:
        raise ValueError(f"need q > order >= 1, got q={q}, order={order}")
    return np.diff(np.eye(q), n=order, axis=0)


def penalty_matrix(spec: SplineBasisSpec) -> np.ndarray:
    """``D = Delta^T Delta`` for the ``penalty_order``-th difference operator.

    Rank is ``q - penalty_order``; the null space holds discrete
    polynomials of degree below the order.
    """
    if spec.q <= spec.penalty_order:
        raise ValueError("q must exceed the penalty order")
    delta = difference_operator(spec.q, spec.penalty_order)
    return delta.T @ delta


def penalty_value(spec: SplineBasisSpec, alpha) -> float:
    """``alpha^T D alpha`` evaluated as ``||Delta alpha||^2`` (no cancellation)."""
    d = np.diff(np.asarray(alpha, dtype=float), n=spec.penalty_order)
    return float(d @ d)


def expand_time_varying(spec: SplineBasisSpec, column, periods) -> np.ndarray:
    """Replace a covariate column ``s`` by the ``q`` columns ``s * B_r(t)``."""
    column = np.asarray(column, dtype=float)
    periods = np.asarray(periods, dtype=float)
    if column.shape != periods.shape:
        raise ValueError("column and periods must have the same length")
    return column[:, None] * basis_matrix(spec, periods)
