"""Explicit catch-up growth dynamics around a population curve ``g``.

One transition from visit ``j-1`` to ``j`` with gap ``D = t_j - t_{j-1}``::

    W_j = W_{j-1} + {g(t_j) - g(t_{j-1})} + b D {W_{j-1} - g(t_{j-1})} + s(D) e_j

so the centered process ``W* = W - g`` follows the AR(1)-like recursion::

    W*_j = (1 + b D) W*_{j-1} + s(D) e_j

Deviations shrink when ``-2 < b D < 0``: negative ``b`` means catch-up.
``b`` is either a scalar or a spline evaluated at the midpoint age
``(t_j + t_{j-1}) / 2``. The noise multiplier ``s(D)`` is ``D`` (linear_gap)
or ``sqrt(D)`` (sqrt_gap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Literal, Sequence, Union

import numpy as np

from .basis import BSplineBasis, PenaltyConfig, Spline, design_matrix
from .data import LongitudinalDataset, Measurement, Subject
from .fit import SingularSystemError, fit_penalized_ls

__all__ = [
    "CatchupModel",
    "CenteredTrajectory",
    "CatchupEstimate",
    "UnidentifiableError",
    "step_eq3",
    "step_eq4",
    "simulate_cohort",
    "center",
    "uncenter",
    "estimate_b",
    "midpoint_ages",
    "is_catchup",
]

NoiseScaling = Literal["linear_gap", "sqrt_gap"]
BSpec = Union[float, Spline]


class UnidentifiableError(ValueError):
    pass


def _noise_scale(D, noise_scaling: NoiseScaling):
    if noise_scaling == "linear_gap":
        return D
    if noise_scaling == "sqrt_gap":
        return np.sqrt(D)
    raise ValueError(f"unknown noise scaling {noise_scaling!r}")


@dataclass(frozen=True)
class CatchupModel:
    g: Spline
    b: BSpec = 0.0
    sigma: float = 1.0
    noise_scaling: NoiseScaling = "linear_gap"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise scale must be non-negative, got {self.sigma}")
        _noise_scale(1.0, self.noise_scaling)
        if isinstance(self.b, Spline):
            g_lo, g_hi = self.g.domain
            b_lo, b_hi = self.b.domain
            if b_lo > g_lo or b_hi < g_hi:
                raise ValueError("spline b must cover the age domain of g")
        else:
            object.__setattr__(self, "b", float(self.b))

    def b_at(self, t_prev, t):
        """Catch-up coefficient for the transition ``t_prev -> t``."""
        if isinstance(self.b, Spline):
            return self.b(0.5 * (np.asarray(t) + np.asarray(t_prev)))
        return self.b


def _check_step(model: CatchupModel, t_prev: float, t: float) -> float:
    if not t > t_prev:
        raise ValueError(f"current age {t} must exceed previous age {t_prev}")
    lo, hi = model.g.domain
    if t_prev < lo or t > hi:
        raise ValueError(f"ages {t_prev}, {t} outside the curve domain [{lo}, {hi}]")
    return t - t_prev


def _transition(w_prev, g_prev, g_now, b_eff, D, noise):
    return w_prev + (g_now - g_prev) + b_eff * D * (w_prev - g_prev) + noise


def step_eq3(model: CatchupModel, t_prev: float, t: float, w_prev: float, e: float) -> float:
    """Next raw weight given the previous one and a standard noise draw `e`."""
    D = _check_step(model, t_prev, t)
    noise = model.sigma * _noise_scale(D, model.noise_scaling) * e
    return float(
        _transition(w_prev, model.g(t_prev), model.g(t), model.b_at(t_prev, t), D, noise)
    )


def step_eq4(model: CatchupModel, t_prev: float, t: float, w_star_prev: float, e: float) -> float:
    """Next centered deviation: ``(1 + b D) w*_prev + sigma s(D) e``."""
    D = _check_step(model, t_prev, t)
    noise = model.sigma * _noise_scale(D, model.noise_scaling) * e
    return float((1.0 + model.b_at(t_prev, t) * D) * w_star_prev + noise)


def simulate_cohort(
    model: CatchupModel,
    schedules: Sequence[Sequence[float]],
    initial_deviations: Sequence[float] | None = None,
    seed: int = 0,
    subject_ids: Sequence[str] | None = None,
) -> LongitudinalDataset:
    """Forward-simulate one trajectory per visit schedule.

    Subject ``i`` draws from its own stream seeded by ``(seed, i)``, so a
    subject's trajectory does not depend on how many others are simulated.
    Without `initial_deviations`, the first deviation is drawn from
    ``Normal(0, (2 sigma)^2)`` on that stream before the transition noise.
    Heights are left empty.
    """
    if initial_deviations is not None and len(initial_deviations) != len(schedules):
        raise ValueError("need one initial deviation per schedule")
    if subject_ids is None:
        subject_ids = [str(i) for i in range(len(schedules))]
    lo, hi = model.g.domain
    subjects = []
    for i, sched in enumerate(schedules):
        t = np.asarray(sched, dtype=float)
        if t.size == 0:
            raise ValueError(f"schedule {i} is empty")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"schedule {i} is not strictly increasing")
        if t[0] < lo or t[-1] > hi:
            raise ValueError(f"schedule {i} leaves the curve domain [{lo}, {hi}]")
        rng = np.random.default_rng([seed, i])
        if initial_deviations is None:
            dev0 = rng.normal(0.0, 2.0 * model.sigma)
        else:
            dev0 = float(initial_deviations[i])
        g_vals = np.asarray(model.g(t))
        D = np.diff(t)
        b_eff = np.broadcast_to(model.b_at(t[:-1], t[1:]), D.shape)
        noise = model.sigma * _noise_scale(D, model.noise_scaling) * rng.standard_normal(D.size)
        w = np.empty(t.size)
        w[0] = g_vals[0] + dev0
        for j in range(1, t.size):
            w[j] = _transition(w[j - 1], g_vals[j - 1], g_vals[j], b_eff[j - 1], D[j - 1], noise[j - 1])
        subjects.append(
            Subject(str(subject_ids[i]), tuple(Measurement(float(a), float(b)) for a, b in zip(t, w)))
        )
    return LongitudinalDataset(tuple(subjects))


@dataclass(frozen=True)
class CenteredTrajectory:
    subject_id: str
    t: np.ndarray
    w_star: np.ndarray


def center(data: LongitudinalDataset, g: Spline) -> list[CenteredTrajectory]:
    out = []
    for s in data:
        t = np.array([m.t for m in s.measurements])
        w = np.array([m.w for m in s.measurements])
        out.append(CenteredTrajectory(s.id, t, w - np.asarray(g(t)) if t.size else w))
    return out


def uncenter(trajectories: Sequence[CenteredTrajectory], g: Spline) -> list[np.ndarray]:
    return [tr.w_star + np.asarray(g(tr.t)) if tr.t.size else tr.w_star for tr in trajectories]


@dataclass(frozen=True)
class CatchupEstimate:
    b_hat: float | Spline
    standard_error: float | None
    n_transitions: int
    residual_sd: float

    @property
    def is_scalar(self) -> bool:
        return not isinstance(self.b_hat, Spline)


def _transitions(data, g):
    lag, incr, t_mid, D = [], [], [], []
    for tr in center(data, g):
        if tr.t.size < 2:
            continue
        gaps = np.diff(tr.t)
        lag.append(tr.w_star[:-1])
        incr.append(np.diff(tr.w_star) / gaps)
        t_mid.append(0.5 * (tr.t[1:] + tr.t[:-1]))
        D.append(gaps)
    if not lag:
        return (np.zeros(0),) * 4
    return tuple(np.concatenate(v) for v in (lag, incr, t_mid, D))


def midpoint_ages(data: LongitudinalDataset) -> np.ndarray:
    """Midpoint ages ``(t_j + t_{j-1}) / 2`` of every transition, where a spline ``b`` is evaluated."""
    mids = [0.5 * (a.t + b.t) for s in data for a, b in zip(s.measurements, s.measurements[1:])]
    return np.array(mids, dtype=float)


def estimate_b(
    data: LongitudinalDataset,
    g: Spline,
    basis: BSplineBasis | None = None,
    noise_scaling: NoiseScaling = "linear_gap",
    penalty: PenaltyConfig | None = None,
) -> CatchupEstimate:
    """Weighted least squares for ``b`` on centered increments.

    Each transition gives ``(w*_j - w*_{j-1}) / D_j = b_eff w*_{j-1} + noise``
    with noise variance proportional to ``s(D)^2 / D^2``, hence weights
    ``D^2 / s(D)^2``. With `basis` given, ``b`` is a spline in the midpoint
    age and the regressors are ``w*_{j-1} B_k(t_mid)``; otherwise ``b`` is a
    scalar and a standard error is reported.
    """
    lag, y, t_mid, D = _transitions(data, g)
    n = lag.size
    if n == 0:
        raise UnidentifiableError("no transitions: every subject has fewer than two visits")
    sd = _noise_scale(D, noise_scaling)
    w = (D / sd) ** 2
    # centering cancels weights of size |w|, so deviations below a few ulps of it are zero
    w_scale = max((abs(m.w) for s in data for m in s.measurements), default=0.0)
    if not np.any(np.abs(lag) > 64 * np.finfo(float).eps * w_scale):
        raise UnidentifiableError("b is unidentifiable: every lagged deviation is zero")

    if basis is None:
        sxx = float(np.sum(w * lag * lag))
        b_hat = float(np.sum(w * lag * y) / sxx)
        resid = y - b_hat * lag
        dof = n - 1
        s2 = float(np.sum(w * resid * resid) / dof) if dof > 0 else float("nan")
        se = math.sqrt(s2 / sxx) if dof > 0 else None
        return CatchupEstimate(b_hat, se, n, math.sqrt(s2) if dof > 0 else float("nan"))

    if n < basis.num_basis:
        raise UnidentifiableError(
            f"{n} transitions cannot identify {basis.num_basis} spline coefficients"
        )
    sw = np.sqrt(w)
    X = design_matrix(basis, t_mid) * lag[:, None]
    lam = 0.0 if penalty is None else penalty.lam
    P = penalty.matrix(basis.num_basis) if penalty is not None else np.zeros((basis.num_basis,) * 2)
    try:
        fit = fit_penalized_ls(sw[:, None] * X, sw * y, P, lam)
    except SingularSystemError as exc:
        raise UnidentifiableError(
            "spline b is unidentifiable: transitions do not span the basis domain "
            "with non-zero lagged deviations"
        ) from exc
    dof = n - fit.edf
    resid_sd = math.sqrt(fit.rss / dof) if dof > 0 else float("nan")
    return CatchupEstimate(Spline(basis, fit.coeffs), None, n, resid_sd)


def is_catchup(estimate: CatchupEstimate, alpha: float = 0.05) -> str:
    """One-sided test of ``b < 0``: ``"catchup"`` iff ``b_hat + z_{1-alpha} se < 0``.

    The standard error is floored at a few ulps of ``1 + |b_hat|`` so that
    estimates from noiseless data that are zero up to rounding are not
    declared significant.
    """
    if not estimate.is_scalar:
        raise ValueError("spline-valued b has no scalar test; inspect b(t) pointwise")
    if estimate.standard_error is None:
        raise ValueError("estimate carries no standard error")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    b = float(estimate.b_hat)
    se = max(estimate.standard_error, 64 * np.finfo(float).eps * (1.0 + abs(b)))
    z = NormalDist().inv_cdf(1.0 - alpha)
    return "catchup" if b + z * se < 0 else "no_evidence"
