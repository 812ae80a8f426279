"""Penalized least squares, GCV smoothing selection and quantile regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearFit",
    "QuantileFit",
    "SolverReport",
    "SingularSystemError",
    "DEFAULT_LAMBDA_GRID",
    "fit_penalized_ls",
    "effective_df",
    "select_lambda_gcv",
    "pinball_loss",
    "pinball_objective",
    "fit_quantile",
]

DEFAULT_LAMBDA_GRID = np.logspace(-6, 6, 61)


class SingularSystemError(np.linalg.LinAlgError):
    """The penalized normal equations have no unique solution.

    ``null_direction`` is a unit coefficient vector the system cannot resolve.
    """

    def __init__(self, message: str, null_direction: np.ndarray):
        super().__init__(message)
        self.null_direction = null_direction


@dataclass(frozen=True)
class LinearFit:
    coeffs: np.ndarray
    lam: float
    edf: float
    gcv: float
    objective: float
    rss: float


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError(f"design matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.size:
        raise ValueError(f"design has {X.shape[0]} rows but response has {y.size} entries")
    return X, y


def _penalty_root(P: np.ndarray, p: int) -> np.ndarray:
    # P = R.T @ R with R square; P is symmetric PSD by contract
    P = np.asarray(P, dtype=float)
    if P.shape != (p, p):
        raise ValueError(f"penalty must be {p}x{p}, got shape {P.shape}")
    evals, evecs = np.linalg.eigh(0.5 * (P + P.T))
    # rounding in eigh leaves ~eps-sized eigenvalues on the null space; zero them
    cutoff = p * np.finfo(float).eps * max(float(np.abs(evals).max(initial=0.0)), 1.0)
    evals = np.where(evals > cutoff, evals, 0.0)
    return np.sqrt(evals)[:, None] * evecs.T


def _stacked_svd(X, P, lam):
    n, p = X.shape
    if lam < 0:
        raise ValueError(f"smoothing weight must be non-negative, got {lam}")
    if lam > 0:
        M = np.vstack([X, np.sqrt(lam) * _penalty_root(P, p)])
    else:
        _penalty_root(P, p)  # shape check only
        M = X
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size < p or s[-1] <= max(M.shape) * np.finfo(float).eps * s[0]:
        direction = Vt[-1] if s.size == p else np.linalg.svd(M)[2][-1]
        raise SingularSystemError(
            "X'X + lambda*P is singular; unresolved coefficient direction "
            + np.array2string(direction, precision=4),
            direction,
        )
    return U, s, Vt


def _edf(X, Vt, s) -> float:
    # top block of U recomputed as X V / s, accurate for small singular values
    Un = (X @ Vt.T) / s
    return float(np.sum(Un * Un))


def fit_penalized_ls(X, y, P, lam: float) -> LinearFit:
    """Solve ``(X'X + lam P) beta = X'y``.

    The system is solved as the stacked least-squares problem
    ``[X; sqrt(lam) R] beta ~ [y; 0]`` with ``P = R'R``, which keeps the
    conditioning at the square root of the normal equations'. With the SVD
    ``U S V'`` of the stacked matrix, the hat matrix is ``U_n U_n'`` where
    ``U_n = X V / S``, so the effective degrees of freedom are ``||U_n||_F^2``.
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    lam = float(lam)
    U, s, Vt = _stacked_svd(X, P, lam)
    Un = U[:n]
    coeffs = Vt.T @ ((Un.T @ y) / s)
    edf = _edf(X, Vt, s)
    resid = y - X @ coeffs
    rss = float(resid @ resid)
    pen = float(coeffs @ np.asarray(P, dtype=float) @ coeffs) if lam > 0 else 0.0
    gcv = n * rss / (n - edf) ** 2 if n - edf > 1e-9 * n else np.inf
    return LinearFit(coeffs, lam, edf, float(gcv), rss + lam * pen, rss)


def effective_df(X, P, lam: float) -> float:
    """Trace of the hat matrix ``X (X'X + lam P)^-1 X'``."""
    X = np.asarray(X, dtype=float)
    _, s, Vt = _stacked_svd(X, P, float(lam))
    return _edf(X, Vt, s)


def select_lambda_gcv(X, y, P, grid=None):
    """Pick the grid value minimizing ``n RSS / (n - edf)^2``.

    Grid points whose fit is singular or saturated (edf equal to n) get an
    infinite score and are skipped. Scores equal up to rounding are tied and
    the larger smoothing weight wins.

    Returns
    -------
    lambda_star : float
    fit : LinearFit
    scores : ndarray
        GCV score per grid entry, in grid order.
    """
    X, y = _check_xy(X, y)
    grid = DEFAULT_LAMBDA_GRID if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty smoothing-parameter grid")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ValueError("smoothing-parameter grid entries must be finite and non-negative")
    fits: list[LinearFit | None] = []
    scores = np.full(grid.size, np.inf)
    for i, lam in enumerate(grid):
        try:
            fit = fit_penalized_ls(X, y, P, lam)
        except SingularSystemError:
            fits.append(None)
            continue
        fits.append(fit)
        scores[i] = fit.gcv
    finite = np.isfinite(scores)
    if not finite.any():
        raise ValueError("GCV undefined at every grid point (all fits singular or saturated)")
    best = scores[finite].min()
    tol = 1e-10 * (float(np.mean(y * y)) + np.finfo(float).tiny) + 1e-12 * abs(best)
    tied = np.flatnonzero(finite & (scores <= best + tol))
    pick = max(tied, key=lambda i: (grid[i], i))
    return float(grid[pick]), fits[pick], scores


def pinball_loss(u, tau: float):
    """Check loss ``u * (tau - 1{u < 0})``; scalar in, scalar out."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    u_arr = np.asarray(u, dtype=float)
    out = np.where(u_arr >= 0, tau * u_arr, (tau - 1.0) * u_arr)
    return float(out) if out.ndim == 0 else out


def pinball_objective(X, y, beta, tau: float, P=None, lam: float = 0.0) -> float:
    """``sum rho_tau(y - X beta) + (lam / 2) beta' P beta``."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    r = np.asarray(y, dtype=float) - X @ beta
    obj = float(np.sum(pinball_loss(r, tau)))
    if P is not None and lam > 0:
        obj += 0.5 * lam * float(beta @ np.asarray(P, dtype=float) @ beta)
    return obj


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    converged: bool
    polished: bool = False
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    coeffs: np.ndarray
    objective: float
    solver_report: SolverReport = field(repr=False)


def _independent_rows(X: np.ndarray, order: np.ndarray, rank: int) -> list[int]:
    # greedy pick of rows, in the given order, that raise the rank
    chosen: list[int] = []
    basis = np.zeros((0, X.shape[1]))
    scale = np.linalg.norm(X, axis=1).max() or 1.0
    for i in order:
        row = X[i]
        if basis.shape[0]:
            row = row - basis.T @ (basis @ row)
        nrm = np.linalg.norm(row)
        if nrm > 1e-9 * scale:
            chosen.append(int(i))
            basis = np.vstack([basis, row / nrm])
            if len(chosen) == rank:
                break
    return chosen


def _vertex_is_optimal(X, y, beta, tau, rows) -> bool:
    """Subgradient certificate for an interpolating fit on the basic `rows`.

    ``beta`` minimizes the pinball loss iff the basic observations can take
    scores in ``[tau - 1, tau]`` that cancel the score sum of the rest.
    """
    r = y - X @ beta
    rest = np.ones(y.size, dtype=bool)
    rest[rows] = False
    scale = np.abs(y).max() + 1.0
    if np.any(np.abs(r[rest]) <= 1e-12 * scale):
        return False  # degenerate vertex; leave the verdict to the iteration
    psi = tau - (r[rest] < 0)
    d = np.linalg.solve(X[rows].T, -(X[rest].T @ psi))
    slack = 1e-9 * (1.0 + np.abs(d).max())
    return bool(np.all((d >= tau - 1 - slack) & (d <= tau + slack)))


def fit_quantile(
    X,
    y,
    tau: float,
    penalty=None,
    *,
    eps_start: float = 1e-2,
    eps_stop: float = 1e-8,
    max_inner: int = 200,
    tol: float = 1e-12,
) -> QuantileFit:
    """Minimize ``sum rho_tau(y - X beta) + (lam / 2) beta' P beta``.

    Majorize-minimize on the perturbed check loss of Hunter and Lange (2000):
    each step is a weighted ridge-type least-squares solve with weights
    ``1 / (eps + |r|)``. The perturbation ``eps`` (relative to the response
    scale) is halved from `eps_start` to `eps_stop`. Unpenalized fits finish
    with a vertex polish: the exact interpolant of the ``rank(X)`` smallest
    residuals is kept when it does not raise the objective, since a pinball
    minimizer always exists at such a vertex. A full-rank vertex that passes
    the subgradient optimality check counts as converged even when the
    iteration itself hit its cap.

    Parameters
    ----------
    X : (n, p) array_like
    y : (n,) array_like
    tau : float
        Quantile level in (0, 1).
    penalty : tuple (P, lam), optional
        Quadratic penalty matrix and non-negative weight.
    """
    X, y = _check_xy(X, y)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    n, p = X.shape
    P, lam = (None, 0.0) if penalty is None else (np.asarray(penalty[0], float), float(penalty[1]))
    if lam < 0:
        raise ValueError(f"smoothing weight must be non-negative, got {lam}")
    notes = []
    zero_cols = np.flatnonzero(~np.any(X != 0, axis=0))
    if zero_cols.size:
        notes.append(f"all-zero design column(s) {zero_cols.tolist()}")
    R = np.sqrt(2.0 * lam) * _penalty_root(P, p) if lam > 0 else np.zeros((0, p))

    def objective(beta):
        return pinball_objective(X, y, beta, tau, P, lam)

    if n == 0:
        beta = np.zeros(p)
        return QuantileFit(tau, beta, objective(beta), SolverReport(0, True, False, tuple(notes)))

    scale = float(np.mean(np.abs(y - np.median(y)))) or float(np.mean(np.abs(y))) or 1.0
    lin = 2.0 * tau - 1.0
    beta = np.linalg.lstsq(np.vstack([X, R]), np.concatenate([y, np.zeros(R.shape[0])]), rcond=None)[0]

    eps = eps_start
    iterations = 0
    converged = False
    while True:
        e = eps * scale
        prev = np.inf
        inner_done = False
        for _ in range(max_inner):
            iterations += 1
            r = y - X @ beta
            w = 1.0 / (e + np.abs(r))
            sw = np.sqrt(w)
            z = y + lin / w
            A = np.vstack([sw[:, None] * X, R])
            rhs = np.concatenate([sw * z, np.zeros(R.shape[0])])
            beta = np.linalg.lstsq(A, rhs, rcond=None)[0]
            r = y - X @ beta
            surrogate = float(
                np.sum(pinball_loss(r, tau) - 0.5 * e * np.log(e + np.abs(r)))
            )
            if lam > 0:
                surrogate += 0.5 * lam * float(beta @ P @ beta)
            if abs(prev - surrogate) <= tol * (1.0 + abs(surrogate)):
                inner_done = True
                break
            prev = surrogate
        if eps <= eps_stop:
            converged = inner_done
            break
        eps = max(eps / 2.0, eps_stop)

    best = objective(beta)
    polished = False
    if lam == 0.0:
        rank = np.linalg.matrix_rank(X)
        rows = _independent_rows(X, np.argsort(np.abs(y - X @ beta), kind="stable"), rank)
        if len(rows) == rank and rank > 0:
            vertex = np.linalg.lstsq(X[rows], y[rows], rcond=None)[0]
            cand = objective(vertex)
            if cand <= best:
                beta, best, polished = vertex, cand, True
                if rank == p and _vertex_is_optimal(X, y, beta, tau, rows):
                    converged = True
    zero = objective(np.zeros(p))
    if zero < best:
        beta, best = np.zeros(p), zero
        notes.append("zero vector beat the iterative solution")
    if not converged:
        notes.append("MM iterations hit the inner iteration cap")
    return QuantileFit(
        tau, beta, best, SolverReport(iterations, converged, polished, tuple(notes))
    )
