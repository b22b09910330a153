"""From-scratch regression suite."""

from __future__ import annotations

from ..domain import Dataset, ModelKind, ModelSpec
from .base import (
    FORMAT_TAG,
    SPEC_GRAMMAR,
    SchemaMismatch,
    SpecError,
    TrainedModel,
    format_spec,
    load_model,
    model_from_json,
    model_to_json,
    parse_spec,
    predict,
    prepare_for_model,
    save_model,
)
from .linear import (
    fit_baseline_mean,
    fit_elastic_net,
    fit_lasso,
    fit_ols,
    lambda_max,
    regularized_cost,
    regularized_cost_gradient,
    soft_threshold,
)
from .svr import KernelSpec, default_gamma, fit_svr, kernel_matrix, svr_kernel_for


def fit_model(dataset: Dataset, spec: ModelSpec, seed: int = 0, **solver) -> TrainedModel:
    """Train whichever model ``spec`` names; ``solver`` passes tol/max_iter through."""
    kind = spec.kind
    if kind is ModelKind.BASELINE_MEAN:
        return fit_baseline_mean(dataset, seed=seed)
    if kind is ModelKind.OLS:
        return fit_ols(dataset, seed=seed)
    if kind is ModelKind.LASSO:
        return fit_lasso(dataset, spec.lam, seed=seed, **solver)
    if kind is ModelKind.ELASTIC_NET:
        return fit_elastic_net(dataset, spec.lam, spec.l1_ratio, seed=seed, spec=spec, **solver)
    kernel = svr_kernel_for(spec, dataset.matrix)
    c = spec.c if spec.c is not None else 1.0
    eps = spec.epsilon if spec.epsilon is not None else 0.1
    return fit_svr(dataset, kernel, c, eps, seed=seed, spec=spec, **solver)


__all__ = [
    "FORMAT_TAG",
    "SPEC_GRAMMAR",
    "KernelSpec",
    "SchemaMismatch",
    "SpecError",
    "TrainedModel",
    "default_gamma",
    "fit_baseline_mean",
    "fit_elastic_net",
    "fit_lasso",
    "fit_model",
    "fit_ols",
    "fit_svr",
    "format_spec",
    "kernel_matrix",
    "lambda_max",
    "load_model",
    "model_from_json",
    "model_to_json",
    "parse_spec",
    "predict",
    "prepare_for_model",
    "regularized_cost",
    "regularized_cost_gradient",
    "save_model",
    "soft_threshold",
]
