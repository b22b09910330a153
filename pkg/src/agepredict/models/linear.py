"""Linear regressors: OLS, LASSO and ElasticNet by coordinate descent, and the mean baseline.

The penalized solvers minimize

    (1 / (2n)) * sum_i (x_i . theta + b - y_i)^2
        + lam * l1_ratio * ||theta||_1 + (lam / 2) * (1 - l1_ratio) * ||theta||_2^2

with the intercept ``b`` unpenalized. :func:`regularized_cost` is the
unscaled sum-of-squares form with an L2 penalty; it has no 1/n, so for ridge
``J(theta) = 2n * objective`` when ``lam_J = 2n * lam``.
"""

from __future__ import annotations

import logging

import numpy as np

from ..domain import Dataset, ModelKind, ModelSpec, validate_dataset
from .base import TrainedModel

logger = logging.getLogger(__name__)

OLS_JITTER = 1e-10
_SINGULAR_RCOND = 1e-12


def check_trainable(dataset: Dataset, min_rows: int = 1) -> None:
    problems = validate_dataset(dataset)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems))
    if dataset.n_rows < min_rows:
        raise ValueError(f"need at least {min_rows} training row(s), got {dataset.n_rows}")
    if dataset.has_missing():
        raise ValueError("feature matrix contains missing values; impute or drop them first")
    if np.isnan(dataset.targets).any():
        raise ValueError("targets contain missing values")


def _model(dataset: Dataset, spec: ModelSpec, coef, intercept, meta) -> TrainedModel:
    return TrainedModel(
        spec=spec,
        intercept=float(intercept),
        coefficients=np.asarray(coef, dtype=float),
        column_names=dataset.column_names,
        fit_state=dataset.scaling_state,
        input_state=dataset.scaling_state,
        training_meta=meta,
    )


def regularized_cost(theta, intercept: float, dataset: Dataset, lam: float) -> float:
    """Sum of squared errors plus (lam / 2) * ||theta||^2; the intercept is not penalized."""
    theta = np.asarray(theta, dtype=float)
    X = dataset.matrix
    if theta.shape != (X.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, matrix has {X.shape[1]} columns")
    if dataset.has_missing():
        raise ValueError("feature matrix contains missing values")
    resid = X @ theta + intercept - dataset.targets
    return float(resid @ resid + 0.5 * lam * theta @ theta)


def regularized_cost_gradient(theta, intercept: float, dataset: Dataset, lam: float):
    """Gradient of :func:`regularized_cost` as ``(d_theta, d_intercept)``."""
    theta = np.asarray(theta, dtype=float)
    X = dataset.matrix
    if theta.shape != (X.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, matrix has {X.shape[1]} columns")
    resid = X @ theta + intercept - dataset.targets
    return 2.0 * X.T @ resid + lam * theta, float(2.0 * resid.sum())


def fit_ols(dataset: Dataset, seed: int = 0) -> TrainedModel:
    """Least squares through the normal equations on centered data.

    Columns are scaled to unit norm before solving so the singularity test and
    the 1e-10 diagonal jitter are scale free; ``converged`` is False when the
    jitter was needed.
    """
    check_trainable(dataset)
    X, y = dataset.matrix, dataset.targets
    if X.shape[1] == 0:
        raise ValueError("OLS needs at least one feature column")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    scale = np.where(norms > 0, norms, 1.0)
    Z = Xc / scale
    gram = Z.T @ Z
    rhs = Z.T @ yc
    eig = np.linalg.eigvalsh(gram)
    jittered = bool(eig[0] <= _SINGULAR_RCOND * max(eig[-1], 1.0))
    if jittered:
        gram = gram + OLS_JITTER * np.eye(gram.shape[0])
    coef = np.linalg.solve(gram, rhs) / scale
    intercept = y_mean - x_mean @ coef
    meta = {"n_train": dataset.n_rows, "seed": seed, "converged": not jittered, "iterations": 1, "jittered": jittered}
    return _model(dataset, ModelSpec.ols(), coef, intercept, meta)


def soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def lambda_max(dataset: Dataset) -> float:
    """Smallest L1 penalty at which every LASSO coefficient is exactly zero."""
    X, y = dataset.matrix, dataset.targets
    if X.shape[1] == 0:
        return 0.0
    # same arithmetic as the first coordinate-descent sweep, so the bound is exact
    Xc = np.asfortranarray(X - X.mean(axis=0))
    resid = y - y.mean()
    n = len(y)
    return max(abs(Xc[:, j] @ resid / n) for j in range(X.shape[1]))


def enet_objective(theta, intercept, X, y, lam, l1_ratio) -> float:
    r = y - X @ theta - intercept
    n = len(y)
    return float(
        r @ r / (2 * n)
        + lam * l1_ratio * np.abs(theta).sum()
        + 0.5 * lam * (1 - l1_ratio) * theta @ theta
    )


def _coordinate_descent(X, y, lam, l1_ratio, tol, max_iter, debug):
    n, p = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = np.asfortranarray(X - x_mean)
    col_sq = (Xc * Xc).sum(axis=0) / n
    l1 = lam * l1_ratio
    l2 = lam * (1.0 - l1_ratio)
    theta = np.zeros(p)
    resid = y - y_mean  # residual of the centered problem
    history = []
    if debug:
        history.append(enet_objective(theta, y_mean, X, y, lam, l1_ratio))
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            denom = col_sq[j] + l2
            if denom == 0.0:
                continue
            xj = Xc[:, j]
            old = theta[j]
            rho = xj @ resid / n + col_sq[j] * old
            new = soft_threshold(rho, l1) / denom
            if new != old:
                resid -= xj * (new - old)
                theta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if debug:
            intercept = y_mean - x_mean @ theta
            obj = enet_objective(theta, intercept, X, y, lam, l1_ratio)
            if obj > history[-1] + 1e-12 * max(1.0, abs(history[-1])):
                raise AssertionError(f"objective increased at sweep {sweeps}: {history[-1]} -> {obj}")
            history.append(obj)
        if max_delta < tol:
            converged = True
            break
    intercept = y_mean - x_mean @ theta
    return theta, intercept, converged, sweeps, history


def fit_elastic_net(
    dataset: Dataset,
    lam: float,
    l1_ratio: float,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    seed: int = 0,
    debug: bool = False,
    spec: ModelSpec | None = None,
) -> TrainedModel:
    """Cyclic coordinate descent with soft-thresholding.

    Expects normalized columns; a warning is logged otherwise. The intercept
    is the exact unpenalized minimizer given theta, recomputed after each sweep.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not 0.0 <= l1_ratio <= 1.0:
        raise ValueError(f"l1_ratio must lie in [0, 1], got {l1_ratio}")
    check_trainable(dataset)
    if not dataset.scaling_state.normalized:
        logger.warning("coordinate descent on unnormalized columns (state %s)", dataset.scaling_state.value)
    X = np.asarray(dataset.matrix, dtype=float)
    y = np.asarray(dataset.targets, dtype=float)
    theta, intercept, converged, sweeps, history = _coordinate_descent(X, y, lam, l1_ratio, tol, max_iter, debug)
    if not converged:
        logger.warning("coordinate descent stopped after %d sweeps without converging", sweeps)
    meta = {"n_train": dataset.n_rows, "seed": seed, "converged": converged, "iterations": sweeps}
    if debug:
        meta["objective_history"] = history
    if spec is None:
        spec = ModelSpec.elastic_net(lam, l1_ratio)
    return _model(dataset, spec, theta, intercept, meta)


def fit_lasso(
    dataset: Dataset,
    lam: float,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    seed: int = 0,
    debug: bool = False,
) -> TrainedModel:
    return fit_elastic_net(dataset, lam, 1.0, tol, max_iter, seed, debug, spec=ModelSpec.lasso(lam))


def fit_baseline_mean(dataset: Dataset, seed: int = 0) -> TrainedModel:
    if dataset.n_rows < 1:
        raise ValueError("baseline needs at least one training target")
    if np.isnan(dataset.targets).any():
        raise ValueError("targets contain missing values")
    mean = float(np.mean(dataset.targets))
    return TrainedModel(
        spec=ModelSpec(ModelKind.BASELINE_MEAN),
        intercept=mean,
        mean_value=mean,
        column_names=dataset.column_names,
        fit_state=dataset.scaling_state,
        input_state=dataset.scaling_state,
        training_meta={"n_train": dataset.n_rows, "seed": seed, "converged": True, "iterations": 0},
    )
