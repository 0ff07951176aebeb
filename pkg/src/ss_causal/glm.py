"""Parametric regression engines: OLS, L1-penalized least squares, logistic
regression (IRLS and proximal-Newton L1), basis expansion, and CV penalty
selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import split_folds
from .errors import ConvergenceError, DegenerateError, RankError, ValidationError

LASSO_TOL = 1e-7
LASSO_MAX_ITER = 100_000
# iteration budget for the warm-started CV paths: grid points whose fold fit
# does not converge within the budget are saturated/ill-conditioned (the
# model interpolates the training fold) and are excluded from selection
LASSO_CV_MAX_ITER = 2_000
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
LAMBDA_GRID_SIZE = 100
LAMBDA_GRID_DECADES = 4.0


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "slope", np.asarray(self.slope, dtype=float))
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(self.slope))):
            raise ValidationError("non-finite linear coefficients")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.slope


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    slope: np.ndarray
    clip_eps: float

    def __post_init__(self):
        object.__setattr__(self, "slope", np.asarray(self.slope, dtype=float))
        if not 0.0 < self.clip_eps < 0.5:
            raise ValidationError("clip_eps must be in (0, 0.5)")

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Clipped probabilities h(intercept + x @ slope)."""
        eta = self.intercept + np.asarray(x, dtype=float) @ self.slope
        return np.clip(expit(eta), self.clip_eps, 1.0 - self.clip_eps)


def expand_quadratic_basis(x: np.ndarray) -> np.ndarray:
    """Append element-wise squares: columns (x, x^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([x, x**2])


def _as_weights(weights, m):
    if weights is None:
        return np.ones(m)
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be a finite nonnegative length-m vector")
    if w.sum() <= 0:
        raise ValidationError("weights sum to zero")
    return w


def fit_ols(x: np.ndarray, y: np.ndarray, weights=None) -> LinearFit:
    """Weighted least squares via the normal equations (SPD solve with a
    1e-10 ridge jitter if numerically singular)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    m, p = x.shape
    if m <= p + 1:
        raise RankError(
            f"m={m} <= p+1={p + 1}: underdetermined, use a penalized fit"
        )
    w = _as_weights(weights, m)
    design = np.hstack([np.ones((m, 1)), x])
    gram = design.T @ (design * w[:, None])
    rhs = design.T @ (w * y)
    try:
        coef = _solve_spd(gram, rhs)
    except np.linalg.LinAlgError:
        gram[np.diag_indices_from(gram)] += 1e-10
        coef = _solve_spd(gram, rhs)
    return LinearFit(intercept=coef[0], slope=coef[1:])


def _solve_spd(a, b):
    chol = np.linalg.cholesky(a)
    return np.linalg.solve(chol.T, np.linalg.solve(chol, b))


def _standardize(x, w, m):
    """Weighted column standardization with scale (1/m) sum w (x - mu)^2."""
    wsum = w.sum()
    mu = (w @ x) / wsum
    centered = x - mu
    scale = np.sqrt((w @ centered**2) / m)
    usable = scale > 0
    z = np.zeros_like(centered)
    z[:, usable] = centered[:, usable] / scale[usable]
    return z, mu, scale, usable


def lambda_max(x: np.ndarray, y: np.ndarray, weights=None) -> float:
    """Smallest penalty forcing every slope to zero: max_j |(1/m) sum w z_j r|
    with standardized columns z and intercept-only residuals r."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    m = x.shape[0]
    w = _as_weights(weights, m)
    z, _, _, _ = _standardize(x, w, m)
    ybar = (w @ y) / w.sum()
    return float(np.max(np.abs((w * (y - ybar)) @ z)) / m)


def _cd_lasso_standardized(z, y, w, lam, m, b0=None, max_iter=LASSO_MAX_ITER):
    """Coordinate descent on (1/2m) sum w (y - a - b'z)^2 + lam |b|_1 where
    columns of z satisfy (1/m) sum w z_j^2 = 1 (or are all-zero)."""
    p = z.shape[1]
    wsum = w.sum()
    col_norm = (w @ z**2) / m  # 1 for usable columns, 0 for degenerate
    wz = w[:, None] * z  # precomputed weighted columns
    b = np.zeros(p) if b0 is None else b0.copy()
    a = (w @ (y - z @ b)) / wsum
    r = y - a - z @ b
    usable = np.flatnonzero(col_norm > 0)

    def sweep(indices):
        max_change = 0.0
        for j in indices:
            rho = b[j] * col_norm[j] + wz[:, j] @ r / m
            new_b = _soft_threshold(rho, lam) / col_norm[j]
            if new_b != b[j]:
                r_delta = (new_b - b[j]) * z[:, j]
                r[:] = r - r_delta
                max_change = max(max_change, abs(new_b - b[j]))
                b[j] = new_b
        new_a = a + (w @ r) / wsum
        intercept_change = abs(new_a - a)
        if intercept_change:
            r[:] = r - (new_a - a)
            max_change = max(max_change, intercept_change)
        return max_change, new_a

    it = 0
    while it < max_iter:
        # full sweep: the only place convergence may be declared
        it += 1
        max_change, a = sweep(usable)
        if max_change < LASSO_TOL:
            return a, b
        # cheap inner iterations restricted to the active coordinates
        while it < max_iter:
            it += 1
            max_change, a = sweep(usable[b[usable] != 0.0])
            if max_change < LASSO_TOL:
                break
    raise ConvergenceError(
        "lasso coordinate descent did not converge", last_iterate=(a, b)
    )


def _soft_threshold(v, lam):
    if v > lam:
        return v - lam
    if v < -lam:
        return v + lam
    return 0.0


def fit_lasso(x: np.ndarray, y: np.ndarray, weights=None, lam: float = 0.0) -> LinearFit:
    """L1-penalized weighted least squares by coordinate descent.

    Columns are standardized internally; the intercept is unpenalized;
    coefficients are returned on the original scale.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite inputs")
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    m = x.shape[0]
    w = _as_weights(weights, m)
    z, mu, scale, usable = _standardize(x, w, m)
    a_std, b_std = _cd_lasso_standardized(z, y, w, lam, m)
    slope = np.zeros(x.shape[1])
    slope[usable] = b_std[usable] / scale[usable]
    intercept = a_std - mu @ slope
    return LinearFit(intercept=intercept, slope=slope)


def _deviance(y, prob):
    prob = np.clip(prob, 1e-12, 1 - 1e-12)
    return -2.0 * float(np.sum(y * np.log(prob) + (1 - y) * np.log(1 - prob)))


def fit_logistic(
    x: np.ndarray, y: np.ndarray, lam: float = 0.0, clip_eps: float = 0.01, init=None
) -> LogisticFit:
    """Logistic regression: IRLS when lam=0, proximal Newton (L1 coordinate
    descent on the IRLS quadratic, intercept unpenalized) when lam>0.

    ``init`` optionally warm-starts the solver with (intercept, slope).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    m, p = x.shape
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateError("logistic fit needs both classes present")
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValidationError("logistic response must be binary 0/1")
    if init is None:
        intercept = float(np.log(y.mean() / (1 - y.mean())))
        slope = np.zeros(p)
    else:
        intercept = float(init[0])
        slope = np.asarray(init[1], dtype=float).copy()
    eta = intercept + x @ slope
    dev = _deviance(y, expit(eta))
    for _ in range(IRLS_MAX_ITER):
        prob = expit(eta)
        irls_w = np.maximum(prob * (1 - prob), 1e-10)
        working = eta + (y - prob) / irls_w
        if lam == 0.0:
            design = np.hstack([np.ones((m, 1)), x])
            gram = design.T @ (design * irls_w[:, None])
            rhs = design.T @ (irls_w * working)
            try:
                coef = _solve_spd(gram, rhs)
            except np.linalg.LinAlgError:
                gram[np.diag_indices_from(gram)] += 1e-10
                coef = _solve_spd(gram, rhs)
            new_intercept, new_slope = coef[0], coef[1:]
        else:
            z, mu, scale, usable = _standardize(x, irls_w, m)
            b0 = slope * np.where(scale > 0, scale, 1.0)
            a_std, b_std = _cd_lasso_standardized(z, working, irls_w, lam, m, b0=b0)
            new_slope = np.zeros(p)
            new_slope[usable] = b_std[usable] / scale[usable]
            new_intercept = a_std - mu @ new_slope
        # step-halving toward the previous iterate if the deviance worsens
        step = 1.0
        for _ in range(30):
            cand_intercept = intercept + step * (new_intercept - intercept)
            cand_slope = slope + step * (new_slope - slope)
            cand_eta = cand_intercept + x @ cand_slope
            cand_dev = _deviance(y, expit(cand_eta))
            if cand_dev <= dev + 1e-12 or step < 1e-9:
                break
            step /= 2.0
        else:
            raise ConvergenceError(
                "IRLS diverged despite step-halving",
                last_iterate=LogisticFit(intercept, slope, clip_eps),
            )
        change = abs(dev - cand_dev)
        intercept, slope, eta, dev = cand_intercept, cand_slope, cand_eta, cand_dev
        if change < IRLS_TOL:
            break
    return LogisticFit(intercept=float(intercept), slope=slope, clip_eps=clip_eps)


def lambda_grid(lam_max: float) -> np.ndarray:
    """100 log-spaced penalties spanning 4 decades down from lambda_max."""
    if lam_max <= 0:
        return np.zeros(LAMBDA_GRID_SIZE)
    return np.logspace(
        math.log10(lam_max),
        math.log10(lam_max) - LAMBDA_GRID_DECADES,
        LAMBDA_GRID_SIZE,
    )


def cv_select_lambda(
    x: np.ndarray, y: np.ndarray, family: str, n_folds: int, seed: int
) -> float:
    """Pick the penalty minimizing mean out-of-fold loss (squared error for
    gaussian, deviance for binomial) over the standard grid; ties go to the
    larger penalty."""
    if family not in ("gaussian", "binomial"):
        raise ValidationError(f"unknown family '{family}'")
    if n_folds < 2:
        raise ValidationError("n_folds must be at least 2")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    m = x.shape[0]
    grid = lambda_grid(lambda_max(x, y))
    plan = split_folds(m, n_folds, seed)
    losses = np.zeros(grid.size)
    for k in range(1, n_folds + 1):
        train = plan.train_indices(k)
        test = plan.fold_indices(k)
        xt, yt = x[train], y[train]
        if family == "gaussian":
            # warm-started descending path on standardized coordinates
            wt = np.ones(train.size)
            z, mu, scale, usable = _standardize(xt, wt, train.size)
            tss = float(((yt - yt.mean()) ** 2).sum())
            b_std = np.zeros(x.shape[1])
            for idx, lam in enumerate(grid):
                try:
                    a_std, b_std = _cd_lasso_standardized(
                        z, yt, wt, lam, train.size, b0=b_std,
                        max_iter=LASSO_CV_MAX_ITER,
                    )
                except ConvergenceError:
                    # saturated tail of the path: this penalty and every
                    # smaller one on this fold cannot be selected
                    losses[idx:] = np.inf
                    break
                slope = np.zeros(x.shape[1])
                slope[usable] = b_std[usable] / scale[usable]
                intercept = a_std - mu @ slope
                resid = y[test] - (intercept + x[test] @ slope)
                losses[idx] += float(resid @ resid)
                train_resid = yt - a_std - z @ b_std
                if (
                    np.count_nonzero(b_std) >= train.size // 2
                    and float(train_resid @ train_resid) <= 0.02 * tss
                ):
                    # the fit has begun interpolating the training fold;
                    # stop the path and exclude the smaller penalties
                    losses[idx + 1:] = np.inf
                    break
        else:
            init = None
            for idx, lam in enumerate(grid):
                try:
                    fit = fit_logistic(xt, yt, lam=lam, clip_eps=1e-6, init=init)
                except DegenerateError:
                    losses[idx] += np.inf
                    continue
                init = (fit.intercept, fit.slope)
                losses[idx] += _deviance(y[test], fit.predict_proba(x[test]))
    best = 0
    for idx in range(1, grid.size):
        if losses[idx] < losses[best]:
            best = idx
    return float(grid[best])


def predict_propensity(fit: LogisticFit, x: np.ndarray, basis: str = "linear") -> np.ndarray:
    """Clipped propensity predictions; basis must match the fit."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if basis == "quadratic":
        x = expand_quadratic_basis(x)
    elif basis != "linear":
        raise ValidationError(f"unknown basis '{basis}'")
    if x.shape[1] != fit.slope.shape[0]:
        raise ValidationError(
            f"design has {x.shape[1]} columns, fit expects {fit.slope.shape[0]}"
        )
    return fit.predict_proba(x)
