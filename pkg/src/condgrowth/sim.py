"""Seeded data generators and error metrics.

The sine experiment compares penalized and unpenalized cubic B-spline fits
with many knots on ``y = sin(2x) + noise`` over equally spaced ``x`` in
``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from .basis import BSplineBasis, Spline, design_matrix, difference_penalty, make_knots
from .data import LongitudinalDataset, Measurement, Subject
from .fit import DEFAULT_LAMBDA_GRID, LinearFit, SingularSystemError, fit_penalized_ls, select_lambda_gcv

__all__ = [
    "Fig1Config",
    "Fig1Replication",
    "Fig1Report",
    "truth_fig1",
    "gen_fig1",
    "ise",
    "fit_fig1_replication",
    "run_fig1_experiment",
    "GrowthSimConfig",
    "simulate_growth_cohort",
    "growth_truth",
]


def truth_fig1(x):
    return np.sin(2.0 * np.asarray(x, dtype=float))


def gen_fig1(n: int = 400, seed: int = 0, noise_sd: float = 1.0):
    """``x_i = i / (n - 1)`` and ``y_i = sin(2 x_i) + noise_sd * z_i``."""
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    xs = np.arange(n) / (n - 1)
    rng = np.random.default_rng(seed)
    ys = truth_fig1(xs) + noise_sd * rng.standard_normal(n)
    return xs, ys


def ise(predict: Callable, truth: Callable, grid_size: int = 2001) -> float:
    """Trapezoid-rule ``int_0^1 (predict - truth)^2 dx`` on an equally spaced grid."""
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    x = np.linspace(0.0, 1.0, grid_size)
    d = np.asarray(predict(x), dtype=float) - np.asarray(truth(x), dtype=float)
    return float(np.trapezoid(d * d, x))


@dataclass(frozen=True)
class Fig1Config:
    n: int = 400
    knots: int = 40
    degree: int = 3
    lambda_grid: tuple[float, ...] = tuple(DEFAULT_LAMBDA_GRID)
    seed: int = 0
    replications: int = 100
    noise_sd: float = 1.0
    penalty_order: int = 2
    ise_grid: int = 2001

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if self.knots < 1:
            raise ValueError(f"knots must be at least 1, got {self.knots}")
        if self.replications < 1:
            raise ValueError(f"replications must be at least 1, got {self.replications}")
        if not self.lambda_grid:
            raise ValueError("lambda grid is empty")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    def replication_seed(self, r: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, r])

    def basis(self) -> BSplineBasis:
        return BSplineBasis(make_knots(0.0, 1.0, self.knots, degree=self.degree))


@dataclass(frozen=True)
class Fig1Replication:
    rep: int
    ise_penalized: float
    ise_unpenalized: float
    lambda_star: float
    penalized: Spline | None = field(default=None, repr=False)
    unpenalized: Spline | None = field(default=None, repr=False)


@dataclass(frozen=True)
class Fig1Report:
    replications: tuple[Fig1Replication, ...]
    excluded: tuple[int, ...] = ()

    @property
    def wins(self) -> int:
        return sum(r.ise_penalized < r.ise_unpenalized for r in self.replications)

    @property
    def win_rate(self) -> float:
        return self.wins / len(self.replications) if self.replications else float("nan")

    @property
    def median_ratio(self) -> float:
        if not self.replications:
            return float("nan")
        return float(np.median([r.ise_penalized / r.ise_unpenalized for r in self.replications]))


def fit_fig1_replication(config: Fig1Config, r: int, basis: BSplineBasis | None = None) -> Fig1Replication:
    """Fit one replication. Raises :class:`SingularSystemError` if the unpenalized fit is singular."""
    basis = config.basis() if basis is None else basis
    xs, ys = gen_fig1(config.n, config.replication_seed(r), config.noise_sd)
    X = design_matrix(basis, xs)
    P = difference_penalty(basis.num_basis, config.penalty_order)
    plain: LinearFit = fit_penalized_ls(X, ys, P, 0.0)
    lam, pen, _ = select_lambda_gcv(X, ys, P, config.lambda_grid)
    s_pen = Spline(basis, pen.coeffs)
    s_plain = Spline(basis, plain.coeffs)
    return Fig1Replication(
        rep=r,
        ise_penalized=ise(s_pen, truth_fig1, config.ise_grid),
        ise_unpenalized=ise(s_plain, truth_fig1, config.ise_grid),
        lambda_star=lam,
        penalized=s_pen,
        unpenalized=s_plain,
    )


def run_fig1_experiment(config: Fig1Config = Fig1Config()) -> Fig1Report:
    """Run every replication; singular unpenalized fits are excluded and counted."""
    basis = config.basis()
    reps, excluded = [], []
    for r in range(config.replications):
        try:
            reps.append(fit_fig1_replication(config, r, basis))
        except SingularSystemError:
            excluded.append(r)
    return Fig1Report(tuple(reps), tuple(excluded))


@dataclass(frozen=True)
class GrowthSimConfig:
    """Infant weight/height generator for the conditional quantile model.

    Weights follow ``W_j = g(t_j) + (a + b D_j) W_{j-1} + c H_j + noise_sd * z``
    with i.i.d. normal noise, so every conditional quantile shares ``a, b, c``
    and only the intercept curve shifts with the level.
    """

    n_subjects: int = 300
    n_visits: int = 6
    a: float = 0.6
    b: float = 0.25
    c: float = 0.06
    noise_sd: float = 0.25
    age_max: float = 3.0
    gap_range: tuple[float, float] = (0.1, 0.6)
    birth_weight: tuple[float, float] = (3.4, 0.45)
    seed: int = 0


def _growth_g(t):
    # intercept curve keeping weights on a plausible 3-15 kg path
    t = np.asarray(t, dtype=float)
    return -1.2 + 0.9 * np.log1p(t)


def _height_mean(t):
    return 50.0 + 26.0 * np.sqrt(np.asarray(t, dtype=float))


def simulate_growth_cohort(config: GrowthSimConfig = GrowthSimConfig()) -> LongitudinalDataset:
    subjects = []
    lo, hi = config.gap_range
    for i in range(config.n_subjects):
        rng = np.random.default_rng([config.seed, i])
        gaps = rng.uniform(lo, hi, config.n_visits - 1)
        t = np.concatenate([[0.0], np.cumsum(gaps)])
        t = t[t <= config.age_max]
        h_offset = rng.normal(0.0, 2.0)
        h = _height_mean(t) + h_offset + rng.normal(0.0, 0.5, t.size)
        w = np.empty(t.size)
        w[0] = rng.normal(*config.birth_weight)
        for j in range(1, t.size):
            D = t[j] - t[j - 1]
            w[j] = (
                _growth_g(t[j])
                + (config.a + config.b * D) * w[j - 1]
                + config.c * h[j]
                + config.noise_sd * rng.standard_normal()
            )
        subjects.append(
            Subject(str(i), tuple(Measurement(float(a), float(b), float(c)) for a, b, c in zip(t, w, h)))
        )
    return LongitudinalDataset(tuple(subjects))


def growth_truth(config: GrowthSimConfig, tau: float) -> dict[str, float | Callable]:
    """True conditional quantile parameters of :func:`simulate_growth_cohort`."""
    shift = config.noise_sd * NormalDist().inv_cdf(tau)
    return {"g": lambda t: _growth_g(t) + shift, "a": config.a, "b": config.b, "c": config.c}
