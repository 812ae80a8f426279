"""B-spline knots, basis evaluation, design matrices and difference penalties.

Bases are clamped: the boundary knots are repeated ``degree + 1`` times. A point
exactly at the right boundary is evaluated on the last non-degenerate knot
interval, so design matrices are defined on the whole closed interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "KnotVector",
    "BSplineBasis",
    "PenaltyConfig",
    "Spline",
    "advise_knot_count",
    "make_knots",
    "eval_basis",
    "design_matrix",
    "difference_penalty",
    "eval_spline",
    "greville_abscissae",
]

Placement = Literal["equal_spacing", "covariate_quantiles"]


def advise_knot_count(n: int) -> int:
    """Largest integer ``k`` with ``k**5 <= n``.

    The float estimate is corrected with exact integer arithmetic, so exact
    fifth powers such as 243 or 7776 map to 3 and 6 respectively.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    k = max(1, int(round(n ** 0.2)))
    while k**5 > n:
        k -= 1
    while (k + 1) ** 5 <= n:
        k += 1
    return k


@dataclass(frozen=True)
class KnotVector:
    """Interior knots of a clamped spline on ``[lo, hi]``."""

    lo: float
    hi: float
    interior: tuple[float, ...] = ()
    degree: int = 3

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        interior = tuple(float(v) for v in self.interior)
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
            raise ValueError(f"degenerate knot interval [{lo}, {hi}]")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree}")
        for v in interior:
            if not lo < v < hi:
                raise ValueError(f"interior knot {v} not strictly inside ({lo}, {hi})")
        if any(b <= a for a, b in zip(interior, interior[1:])):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "degree", int(self.degree))

    @property
    def augmented(self) -> np.ndarray:
        p = self.degree
        return np.array([self.lo] * (p + 1) + list(self.interior) + [self.hi] * (p + 1))

    @property
    def num_basis(self) -> int:
        return len(self.interior) + self.degree + 1

    @classmethod
    def from_augmented(cls, augmented: Sequence[float]) -> "KnotVector":
        """Rebuild from a clamped knot sequence (inverse of :attr:`augmented`)."""
        t = np.asarray(augmented, dtype=float)
        if t.size < 2:
            raise ValueError("augmented knot vector too short")
        lo, hi = t[0], t[-1]
        mult = int(np.sum(t == lo))
        if int(np.sum(t == hi)) != mult:
            raise ValueError("boundary knots must have equal multiplicity")
        return cls(lo, hi, tuple(t[mult:-mult]), degree=mult - 1)


@dataclass(frozen=True)
class BSplineBasis:
    knots: KnotVector
    num_basis: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_basis", self.knots.num_basis)

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def domain(self) -> tuple[float, float]:
        return self.knots.lo, self.knots.hi

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.knots.lo) & (x <= self.knots.hi)


@dataclass(frozen=True)
class PenaltyConfig:
    """Difference-penalty order and smoothing weight."""

    order: int = 2
    lam: float = 0.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"penalty order must be a positive integer, got {self.order}")
        if not self.lam >= 0:
            raise ValueError(f"smoothing weight must be non-negative, got {self.lam}")

    def matrix(self, num_basis: int) -> np.ndarray:
        return difference_penalty(num_basis, self.order)


def make_knots(
    lo: float,
    hi: float,
    k: int,
    placement: Placement = "equal_spacing",
    xs=None,
    degree: int = 3,
) -> KnotVector:
    """Place ``k`` interior knots on ``[lo, hi]``.

    Parameters
    ----------
    lo, hi : float
        Boundary of the covariate axis.
    k : int
        Number of interior knots (zero gives a single polynomial piece).
    placement : {"equal_spacing", "covariate_quantiles"}
        Equal spacing puts knot ``i`` at ``lo + i * (hi - lo) / (k + 1)``;
        quantile placement uses the ``i / (k + 1)`` empirical quantiles of `xs`
        (linear interpolation between order statistics).
    xs : array_like, optional
        Covariate sample, required for quantile placement.
    degree : int
        Spline degree.
    """
    lo, hi = float(lo), float(hi)
    if lo >= hi:
        raise ValueError(f"degenerate knot interval [{lo}, {hi}]")
    if k < 0:
        raise ValueError(f"knot count must be non-negative, got {k}")
    probs = np.arange(1, k + 1) / (k + 1)
    if placement == "equal_spacing":
        interior = lo + probs * (hi - lo)
    elif placement == "covariate_quantiles":
        if xs is None or np.size(xs) == 0:
            raise ValueError("quantile knot placement needs a non-empty covariate sample")
        xs = np.asarray(xs, dtype=float).ravel()
        if xs.min() < lo or xs.max() > hi:
            raise ValueError("covariate sample extends outside the knot interval")
        interior = np.unique(np.quantile(xs, probs))
        interior = interior[(interior > lo) & (interior < hi)]
        if interior.size != k:
            raise ValueError(
                f"quantile knots collapse to {interior.size} distinct interior values, need {k}"
            )
    else:
        raise ValueError(f"unknown knot placement {placement!r}")
    return KnotVector(lo, hi, tuple(interior), degree=degree)


def _basis_from_knots(t: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    # Cox-de Boor on a clamped knot array; 0/0 terms are taken as 0.
    n_basis = t.size - degree - 1
    hi = t[n_basis]
    # last interval with positive width, so x == hi lands inside it
    span = np.searchsorted(t, x, side="right") - 1
    last = np.searchsorted(t, hi, side="left") - 1
    span = np.clip(span, degree, last)
    out = np.zeros((x.size, t.size - 1))
    out[np.arange(x.size), span] = 1.0
    for p in range(1, degree + 1):
        nxt = np.zeros((x.size, t.size - 1 - p))
        for i in range(t.size - 1 - p):
            left_den = t[i + p] - t[i]
            right_den = t[i + p + 1] - t[i + 1]
            acc = np.zeros(x.size)
            if left_den > 0:
                acc += (x - t[i]) / left_den * out[:, i]
            if right_den > 0:
                acc += (t[i + p + 1] - x) / right_den * out[:, i + 1]
            nxt[:, i] = acc
        out = nxt
    return out[:, :n_basis]


def _check_domain(basis: BSplineBasis, x: np.ndarray) -> None:
    bad = ~basis.contains(x)
    if np.any(bad):
        lo, hi = basis.domain
        raise ValueError(
            f"{int(bad.sum())} point(s) outside the basis domain [{lo}, {hi}], "
            f"e.g. {x[bad][0]!r}"
        )


def design_matrix(basis: BSplineBasis, xs) -> np.ndarray:
    """Matrix whose row ``i`` holds the basis values at ``xs[i]``."""
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size == 0:
        return np.zeros((0, basis.num_basis))
    _check_domain(basis, xs)
    return _basis_from_knots(basis.knots.augmented, basis.degree, xs)


def eval_basis(basis: BSplineBasis, x: float) -> np.ndarray:
    return design_matrix(basis, [x])[0]


def difference_penalty(num_basis: int, order: int = 2) -> np.ndarray:
    """Return ``D.T @ D`` for the order-`order` forward-difference operator ``D``."""
    if order < 1 or int(order) != order:
        raise ValueError(f"difference order must be a positive integer, got {order}")
    if order >= num_basis:
        raise ValueError(f"difference order {order} must be below the basis size {num_basis}")
    D = np.diff(np.eye(num_basis), n=order, axis=0)
    return D.T @ D


def eval_spline(basis: BSplineBasis, coeffs, x, deriv_order: int = 0):
    """Evaluate a spline (or its first/second derivative) at `x`.

    Derivatives use the coefficient-differencing identity: the derivative of a
    degree ``p`` spline is a degree ``p - 1`` spline on the knot vector with
    one boundary repetition removed at each end, with coefficients
    ``p * (c[i+1] - c[i]) / (t[i+p+1] - t[i+1])``.

    Returns a float for scalar `x` and an array otherwise.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.num_basis,):
        raise ValueError(
            f"expected {basis.num_basis} coefficients, got shape {coeffs.shape}"
        )
    if deriv_order not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {deriv_order}")
    if deriv_order > basis.degree:
        raise ValueError(
            f"derivative order {deriv_order} exceeds spline degree {basis.degree}"
        )
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    _check_domain(basis, xs)

    t = basis.knots.augmented
    p = basis.degree
    c = coeffs
    for _ in range(deriv_order):
        widths = t[p + 1 : p + c.size] - t[1 : c.size]
        c = p * np.diff(c) / widths
        t = t[1:-1]
        p -= 1
    values = _basis_from_knots(t, p, xs) @ c
    return float(values[0]) if scalar else values


def greville_abscissae(basis: BSplineBasis) -> np.ndarray:
    """Knot averages; using ``a + b * greville`` as coefficients reproduces ``a + b x``."""
    t = basis.knots.augmented
    p = basis.degree
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    return np.array([t[i + 1 : i + p + 1].mean() for i in range(basis.num_basis)])


@dataclass(frozen=True)
class Spline:
    """A spline function: basis plus coefficient vector."""

    basis: BSplineBasis
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.num_basis,):
            raise ValueError(
                f"expected {self.basis.num_basis} coefficients, got shape {coeffs.shape}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, x, deriv_order: int = 0):
        return eval_spline(self.basis, self.coeffs, x, deriv_order)

    @property
    def domain(self) -> tuple[float, float]:
        return self.basis.domain

    @classmethod
    def constant(cls, value: float, lo: float, hi: float, degree: int = 3) -> "Spline":
        basis = BSplineBasis(KnotVector(lo, hi, (), degree))
        return cls(basis, np.full(basis.num_basis, float(value)))

    @classmethod
    def linear(cls, intercept: float, slope: float, basis: BSplineBasis) -> "Spline":
        """Exact representation of ``intercept + slope * x`` on `basis`."""
        return cls(basis, intercept + slope * greville_abscissae(basis))
