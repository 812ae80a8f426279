"""Conditional quantile growth charts with lag-1 autoregression.

At quantile level ``tau`` the next weight of a child is modelled as::

    W_j = g(t_j) + (a + b * D_j) * W_{j-1} + c * T(H_j) + e_j

with ``D_j = t_j - t_{j-1}``, ``g`` a B-spline in age and ``T`` either the
identity or the cube of height (weight scales roughly like a volume).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .basis import BSplineBasis, PenaltyConfig, advise_knot_count, design_matrix, eval_spline, make_knots
from .data import LongitudinalDataset
from .fit import QuantileFit, fit_quantile

__all__ = [
    "DEFAULT_TAUS",
    "ConditionalDesign",
    "ConditionalQuantileModel",
    "RankDeficiencyError",
    "MissingHeightError",
    "ScreenResult",
    "Crossing",
    "default_basis",
    "build_conditional_design",
    "fit_conditional_model",
    "fit_conditional_family",
    "predict_conditional_quantile",
    "screen",
    "detect_crossings",
]

Transform = Literal["identity", "cube"]

DEFAULT_TAUS = (0.03, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.97)


class RankDeficiencyError(ValueError):
    """Conditional design columns are linearly dependent.

    ``columns`` names the columns involved in the dependency.
    """

    def __init__(self, message: str, columns: Sequence[str]):
        super().__init__(message)
        self.columns = tuple(columns)


class MissingHeightError(ValueError):
    def __init__(self, rows: Sequence[tuple[str, int]]):
        shown = ", ".join(f"{sid}[{j}]" for sid, j in rows[:20])
        more = f" (+{len(rows) - 20} more)" if len(rows) > 20 else ""
        super().__init__(f"height missing for response rows {shown}{more}")
        self.rows = tuple(rows)


def _transform(h, transform: Transform):
    if transform == "identity":
        return h
    if transform == "cube":
        return h**3
    raise ValueError(f"unknown height transform {transform!r}")


@dataclass(frozen=True)
class ConditionalDesign:
    X: np.ndarray
    y: np.ndarray
    index: tuple[tuple[str, int], ...]
    columns: tuple[str, ...]
    t_prev: np.ndarray
    t: np.ndarray
    w_prev: np.ndarray
    h: np.ndarray


def default_basis(data: LongitudinalDataset, degree: int = 3) -> BSplineBasis:
    """Cubic basis over the observed age range with ``floor(n**(1/5))`` equally spaced knots."""
    ages = data.ages()
    if len(ages) < 2:
        raise ValueError("need at least two measurements to span an age basis")
    n_rows = sum(max(len(s) - 1, 0) for s in data)
    k = advise_knot_count(max(n_rows, 1))
    return BSplineBasis(make_knots(min(ages), max(ages), k, degree=degree))


def build_conditional_design(
    data: LongitudinalDataset, basis: BSplineBasis, transform: Transform = "identity"
) -> ConditionalDesign:
    """Pool every transition ``(j-1, j)`` into one regression row.

    Columns are ``[B_1(t_j) .. B_m(t_j) | W_{j-1} | D_j * W_{j-1} | T(H_j)]`` and
    the response is ``W_j``. First visits never appear as responses.
    """
    _transform(1.0, transform)
    index, t_prev, t_now, w_prev, h_now, y = [], [], [], [], [], []
    missing = []
    for s in data:
        ms = s.measurements
        for j in range(1, len(ms)):
            index.append((s.id, j))
            t_prev.append(ms[j - 1].t)
            t_now.append(ms[j].t)
            w_prev.append(ms[j - 1].w)
            y.append(ms[j].w)
            if ms[j].h is None:
                missing.append((s.id, j))
                h_now.append(np.nan)
            else:
                h_now.append(ms[j].h)
    if missing:
        raise MissingHeightError(missing)
    t_prev_a, t_a, w_prev_a, h_a = (np.asarray(v, dtype=float) for v in (t_prev, t_now, w_prev, h_now))
    B = design_matrix(basis, t_a)
    D = t_a - t_prev_a
    X = np.column_stack([B, w_prev_a, D * w_prev_a, _transform(h_a, transform)]) if len(y) else np.zeros((0, basis.num_basis + 3))
    columns = tuple(f"g[{k}]" for k in range(basis.num_basis)) + ("w_prev", "gap*w_prev", f"{transform}(h)")
    return ConditionalDesign(X, np.asarray(y, dtype=float), tuple(index), columns, t_prev_a, t_a, w_prev_a, h_a)


@dataclass(frozen=True)
class ConditionalQuantileModel:
    tau: float
    basis: BSplineBasis
    g_coeffs: np.ndarray
    a: float
    b: float
    c: float
    transform: Transform = "identity"
    objective: float = float("nan")
    fit: QuantileFit | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g = np.array(self.g_coeffs, dtype=float)
        if g.shape != (self.basis.num_basis,):
            raise ValueError(f"expected {self.basis.num_basis} g coefficients, got shape {g.shape}")
        g.setflags(write=False)
        object.__setattr__(self, "g_coeffs", g)
        _transform(1.0, self.transform)

    def g(self, t):
        return eval_spline(self.basis, self.g_coeffs, t)


def _check_rank(X: np.ndarray, columns: Sequence[str], R: np.ndarray) -> None:
    M = np.vstack([X, R]) if R.size else X
    if M.shape[0] < M.shape[1]:
        raise RankDeficiencyError(
            f"{X.shape[0]} transitions cannot identify {X.shape[1]} parameters", columns
        )
    # column scaling so the rank test is unit-free
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    _, s, Vt = np.linalg.svd(M / norms, full_matrices=False)
    if s[-1] > max(M.shape) * 1e-10 * s[0]:
        return
    v = Vt[-1]
    involved = [columns[k] for k in np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())]
    if len(involved) == 2:
        msg = f"collinear design columns {involved[0]!r} and {involved[1]!r}"
    else:
        msg = "linearly dependent design columns " + ", ".join(repr(c) for c in involved)
    if "w_prev" in involved and "gap*w_prev" in involved:
        msg += " (are all visit gaps equal?)"
    raise RankDeficiencyError(msg, involved)


def fit_conditional_model(
    data: LongitudinalDataset,
    tau: float,
    basis: BSplineBasis | None = None,
    transform: Transform = "identity",
    penalty: PenaltyConfig | None = None,
) -> ConditionalQuantileModel:
    """Fit one quantile level by pooled pinball-loss minimization.

    An optional difference penalty acts on the age-spline coefficients only.
    """
    if basis is None:
        basis = default_basis(data)
    design = build_conditional_design(data, basis, transform)
    m = basis.num_basis
    p = design.X.shape[1]
    P = None
    R = np.zeros((0, p))
    if penalty is not None and penalty.lam > 0:
        P = np.zeros((p, p))
        P[:m, :m] = penalty.matrix(m)
        D = np.diff(np.eye(m), n=penalty.order, axis=0)
        R = np.hstack([np.sqrt(penalty.lam) * D, np.zeros((D.shape[0], p - m))])
    _check_rank(design.X, design.columns, R)
    qfit = fit_quantile(design.X, design.y, tau, None if P is None else (P, penalty.lam))
    beta = qfit.coeffs
    return ConditionalQuantileModel(
        tau=float(tau),
        basis=basis,
        g_coeffs=beta[:m],
        a=float(beta[m]),
        b=float(beta[m + 1]),
        c=float(beta[m + 2]),
        transform=transform,
        objective=qfit.objective,
        fit=qfit,
    )


def fit_conditional_family(
    data: LongitudinalDataset,
    taus: Sequence[float] = DEFAULT_TAUS,
    basis: BSplineBasis | None = None,
    transform: Transform = "identity",
    penalty: PenaltyConfig | None = None,
) -> list[ConditionalQuantileModel]:
    if basis is None:
        basis = default_basis(data)
    return [fit_conditional_model(data, tau, basis, transform, penalty) for tau in sorted(taus)]


def predict_conditional_quantile(
    model: ConditionalQuantileModel, t_prev: float, t: float, w_prev: float, h: float
) -> float:
    """``g(t) + (a + b (t - t_prev)) w_prev + c T(h)``."""
    if not t > t_prev:
        raise ValueError(f"current age {t} must exceed previous age {t_prev}")
    g_t = model.g(float(t))
    return g_t + (model.a + model.b * (t - t_prev)) * w_prev + model.c * _transform(float(h), model.transform)


@dataclass(frozen=True)
class ScreenResult:
    level: float
    flag: str | None = None  # "below chart" / "above chart"


def _check_family(models: Sequence[ConditionalQuantileModel]) -> None:
    first = models[0]
    for m in models[1:]:
        if m.basis != first.basis or m.transform != first.transform:
            raise ValueError("all models must share the age basis and height transform")


def screen(
    models: Sequence[ConditionalQuantileModel],
    t_prev: float,
    t: float,
    w_prev: float,
    h: float,
    w_observed: float,
) -> ScreenResult:
    """Conditional quantile level of an observed weight.

    The predicted quantiles are sorted across levels (monotone rearrangement)
    and `w_observed` is inverted by piecewise-linear interpolation. On a flat
    stretch of equal predictions the mid level of the stretch is returned.
    Weights outside the chart are clamped to the extreme level and flagged.
    """
    if len(models) < 3:
        raise ValueError(f"screening needs at least 3 quantile levels, got {len(models)}")
    models = sorted(models, key=lambda m: m.tau)
    _check_family(models)
    taus = np.array([m.tau for m in models])
    if np.any(np.diff(taus) <= 0):
        raise ValueError("quantile levels must be distinct")
    q = np.sort([predict_conditional_quantile(m, t_prev, t, w_prev, h) for m in models])
    w = float(w_observed)
    if w < q[0]:
        return ScreenResult(float(taus[0]), "below chart")
    if w > q[-1]:
        return ScreenResult(float(taus[-1]), "above chart")
    hits = np.flatnonzero(q == w)
    if hits.size:
        return ScreenResult(float(0.5 * (taus[hits[0]] + taus[hits[-1]])))
    k = int(np.searchsorted(q, w))  # q[k-1] < w < q[k]
    frac = (w - q[k - 1]) / (q[k] - q[k - 1])
    return ScreenResult(float(taus[k - 1] + frac * (taus[k] - taus[k - 1])))


@dataclass(frozen=True)
class Crossing:
    query: int
    tau_low: float
    tau_high: float
    q_low: float
    q_high: float


def detect_crossings(
    models: Sequence[ConditionalQuantileModel], queries
) -> list[Crossing]:
    """Adjacent level pairs whose predicted quantiles are strictly out of order.

    `queries` is an iterable of ``(t_prev, t, w_prev, h)`` tuples.
    """
    models = sorted(models, key=lambda m: m.tau)
    report: list[Crossing] = []
    if len(models) < 2:
        return report
    for i, (t_prev, t, w_prev, h) in enumerate(queries):
        q = [predict_conditional_quantile(m, t_prev, t, w_prev, h) for m in models]
        for lo, hi, q_lo, q_hi in zip(models, models[1:], q, q[1:]):
            if q_lo > q_hi:
                report.append(Crossing(i, lo.tau, hi.tau, q_lo, q_hi))
    return report
