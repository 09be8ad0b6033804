"""Lasso fitting, cross-validation, and the active-set estimation pipeline.

The estimator minimizes (1/2n)|y - Xb|_2^2 + lambda |b|_1 by cyclic
coordinate descent with exact soft-threshold updates and active-set cycling:
full sweeps alternate with inner sweeps over the current support until a full
sweep moves no coefficient by more than the tolerance.

The pipeline for estimating the support when it is unknown:

1. pick lambda_cv by K-fold cross-validation (minimum mean error rule),
2. estimate sigma^2 by the unbiased residual estimator at the CV fit,
3. convert sigma^2 to the theoretical penalty level lambda_train,
4. refit at lambda_train and read off the nonzero coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFold,
    DegreesOfFreedomExhausted,
    DimensionMismatch,
    EmptySignal,
    InvalidConfig,
    InvalidDelta,
)
from .model import ActiveSet, DesignMatrix, standardize


def soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@dataclass(frozen=True)
class LassoFit:
    """A lasso solution; ``support`` lists the exactly-nonzero coordinates."""

    beta: np.ndarray
    lam: float
    objective: float
    support: tuple[int, ...]
    iterations: int
    converged: bool


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return float(r @ r / (2.0 * len(y)) + lam * np.abs(beta).sum())


def _as_array(X) -> np.ndarray:
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def fit_lasso(
    X,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    beta0: np.ndarray | None = None,
) -> LassoFit:
    """Cyclic coordinate descent for standardized X and centered y.

    Convergence is declared when a full sweep changes no coefficient by more
    than ``tol``; hitting ``max_iter`` sweeps returns the best iterate with
    ``converged=False``.  ``beta0`` warm-starts the path.
    """
    X = _as_array(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({n},)")
    if lam < 0:
        raise InvalidConfig("lambda must be nonnegative")
    col_sq = (X * X).sum(axis=0) / n
    if np.any(col_sq <= 0):
        raise InvalidConfig("zero column in design; standardize the input first")

    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    if beta.shape != (p,):
        raise DimensionMismatch("warm start length must equal p")
    resid = y - X @ beta

    def sweep(indices) -> float:
        nonlocal resid
        max_delta = 0.0
        for j in indices:
            bj = beta[j]
            rho_j = float(X[:, j] @ resid) / n + col_sq[j] * bj
            new = soft_threshold(rho_j, lam) / col_sq[j]
            if new != bj:
                resid = resid - X[:, j] * (new - bj)
                beta[j] = new
                max_delta = max(max_delta, abs(new - bj))
        return max_delta

    sweeps = 0
    converged = False
    while sweeps < max_iter:
        sweeps += 1
        if sweep(range(p)) < tol:
            converged = True
            break
        while sweeps < max_iter:
            support = np.flatnonzero(beta)
            if support.size == 0:
                break
            sweeps += 1
            if sweep(support) < tol:
                break

    return LassoFit(
        beta=beta,
        lam=float(lam),
        objective=lasso_objective(X, y, beta, lam),
        support=tuple(int(j) for j in np.flatnonzero(beta)),
        iterations=sweeps,
        converged=converged,
    )


def lambda_max(X, y: np.ndarray) -> float:
    """Smallest penalty that kills every coefficient: max_j |x_j'y| / n."""
    X = _as_array(X)
    return float(np.abs(X.T @ y).max() / X.shape[0])


def lambda_bound(sigma: float, n: int, p: int, delta: float) -> float:
    """The theoretical penalty level 2 sigma sqrt((2/n)(1 + log(p/delta))).

    delta = 1 is admitted as a degenerate boundary (log p remains).
    """
    if not (0.0 < delta <= 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1], got {delta}")
    if sigma < 0:
        raise InvalidConfig("sigma must be nonnegative")
    if n < 1 or p < 1:
        raise InvalidConfig("need n >= 1 and p >= 1")
    return float(2.0 * sigma * np.sqrt((2.0 / n) * (1.0 + np.log(p / delta))))


@dataclass(frozen=True)
class CvResult:
    lambda_cv: float
    beta_cv: np.ndarray
    lambdas: np.ndarray        # grid in the order provided
    fold_mse: np.ndarray       # folds x grid validation errors
    mean_mse: np.ndarray


def _fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % folds
    return fold_of


def cross_validate(
    X,
    y: np.ndarray,
    folds: int,
    lambda_grid,
    seed: int,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> CvResult:
    """K-fold cross-validation over a penalty grid.

    Folds are assigned by a seeded permutation (sizes balanced within one).
    Each training fold is restandardized and its response recentered before
    fitting; validation predictions are mapped back through the training
    fold's factors.  Ties in mean error resolve to the larger (sparser)
    penalty.  ``beta_cv`` is the full-data refit at the winning penalty, on
    the standardized full design.
    """
    X = _as_array(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({n},)")
    if folds < 2:
        raise InvalidConfig("need at least 2 folds")
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise InvalidConfig("lambda grid must be nonempty")
    if n // folds < 2:
        raise DegenerateFold(f"folds of size {n // folds} < 2 with n={n}, folds={folds}")

    fold_of = _fold_assignment(n, folds, seed)
    order = np.argsort(-grid, kind="stable")  # descending for warm starts
    fold_mse = np.zeros((folds, grid.size))

    for f in range(folds):
        val = fold_of == f
        Xtr_raw, ytr_raw = X[~val], y[~val]
        Xval, yval = X[val], y[val]
        std = standardize(Xtr_raw)
        y_mean = float(ytr_raw.mean())
        ytr = ytr_raw - y_mean
        Xval_std = (Xval - std.center) / std.scale
        beta = np.zeros(p)
        for pos in order:
            fit = fit_lasso(std.design, ytr, grid[pos], tol=tol, max_iter=max_iter, beta0=beta)
            beta = fit.beta
            pred = Xval_std @ beta + y_mean
            fold_mse[f, pos] = float(np.mean((yval - pred) ** 2))

    mean_mse = fold_mse.mean(axis=0)
    best = min(range(grid.size), key=lambda i: (mean_mse[i], -grid[i]))
    lambda_cv = float(grid[best])

    std_full = standardize(X)
    y_centered = y - y.mean()
    beta_full = np.zeros(p)
    for pos in order:
        fit = fit_lasso(std_full.design, y_centered, grid[pos], tol=tol, max_iter=max_iter,
                        beta0=beta_full)
        beta_full = fit.beta
        if grid[pos] == lambda_cv:
            break

    return CvResult(
        lambda_cv=lambda_cv,
        beta_cv=beta_full,
        lambdas=grid,
        fold_mse=fold_mse,
        mean_mse=mean_mse,
    )


def sigma_sq_unbiased(y: np.ndarray, X, beta_cv: np.ndarray, s_cv: int, n: int) -> float:
    """Residual sum of squares over (n - s_cv - 1) degrees of freedom."""
    X = _as_array(X)
    y = np.asarray(y, dtype=float)
    beta_cv = np.asarray(beta_cv, dtype=float)
    if y.shape != (X.shape[0],) or beta_cv.shape != (X.shape[1],):
        raise DimensionMismatch("y/beta shapes inconsistent with X")
    if n != len(y):
        raise DimensionMismatch(f"n={n} does not match len(y)={len(y)}")
    dof = n - s_cv - 1
    if dof < 1:
        raise DegreesOfFreedomExhausted(f"n - s_cv - 1 = {dof} < 1")
    r = y - X @ beta_cv
    return float(r @ r) / dof


@dataclass(frozen=True)
class ActiveSetEstimate:
    """Output of the four-step support-estimation pipeline, with the
    intermediate artifacts kept for audit."""

    s_hat: ActiveSet
    sigma_sq_hat: float
    lambda_train: float
    s_cv: int
    beta_train: np.ndarray
    lambda_cv: float
    beta_cv: np.ndarray


def default_lambda_grid(X, y: np.ndarray, num: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced grid from lambda_max down to ratio * lambda_max."""
    lmax = lambda_max(X, y)
    if lmax <= 0:
        raise EmptySignal("response carries no signal (lambda_max = 0)")
    return np.geomspace(lmax, ratio * lmax, num)


def estimate_active_set(
    X_train,
    y_train: np.ndarray,
    delta: float = 0.1,
    folds: int = 10,
    seed: int = 0,
    grid_size: int = 100,
    grid_ratio: float = 1e-4,
) -> ActiveSetEstimate:
    """CV penalty -> unbiased sigma^2 -> theoretical penalty -> refit support."""
    X = _as_array(X_train)
    y = np.asarray(y_train, dtype=float)
    std = standardize(X)
    yc = y - y.mean()
    n, p = X.shape

    grid = default_lambda_grid(std.design, yc, num=grid_size, ratio=grid_ratio)
    cv = cross_validate(std.design, yc, folds, grid, seed)
    s_cv = int(np.count_nonzero(cv.beta_cv))

    sigma_sq = sigma_sq_unbiased(yc, std.design, cv.beta_cv, s_cv, n)
    if sigma_sq <= 0.0:
        raise EmptySignal("perfect CV fit leaves no residual; lambda_train is ill-posed")
    lam_train = lambda_bound(float(np.sqrt(sigma_sq)), n, p, delta)

    refit = fit_lasso(std.design, yc, lam_train)
    if not refit.support:
        raise EmptySignal("no nonzero coefficients at lambda_train")

    return ActiveSetEstimate(
        s_hat=ActiveSet(refit.support),
        sigma_sq_hat=sigma_sq,
        lambda_train=lam_train,
        s_cv=s_cv,
        beta_train=refit.beta,
        lambda_cv=cv.lambda_cv,
        beta_cv=cv.beta_cv,
    )
