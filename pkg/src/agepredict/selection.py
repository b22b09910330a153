"""Model selection: splits, cross-validation grids, information criteria, MI feature ranking."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .domain import Dataset, ModelSpec, NormalizationParams
from .evaluate import accuracy_at, mae, medae, r2
from .featurize import Preprocessing, apply_preprocessing, fit_preprocessing
from .models import TrainedModel, fit_lasso, fit_model, format_spec, predict

logger = logging.getLogger(__name__)

DEFAULT_TEST_FRACTIONS = (0.33, 0.25, 0.1)
DEFAULT_LASSO_GRID = (2.0, 1.0, 0.5, 0.25, 0.125)
SMALL_LAMBDA_GRID = (0.1, 0.01, 0.001, 0.0001)
DEFAULT_MI_BINS = 10

METRICS = {
    "mae": mae,
    "medae": medae,
    "r2": r2,
    "acc10": lambda p, a: accuracy_at(p, a, 10),
}


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.33
    seed: int = 0
    strategy: str = "shuffle"
    k: int = 5

    def __post_init__(self):
        if self.strategy not in ("shuffle", "kfold"):
            raise ValueError(f"unknown split strategy {self.strategy!r}")
        if self.strategy == "shuffle" and not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.strategy == "kfold" and self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")

    @classmethod
    def kfold(cls, k: int, seed: int = 0) -> "SplitPlan":
        return cls(test_fraction=1.0 / k, seed=seed, strategy="kfold", k=k)

    @property
    def plan_id(self) -> str:
        if self.strategy == "kfold":
            return f"kfold:k={self.k},seed={self.seed}"
        return f"shuffle:test={self.test_fraction!r},seed={self.seed}"


def holdout_size(n: int, fraction: float) -> int:
    """round(n * fraction) with halves rounded up."""
    return int(math.floor(n * fraction + 0.5))


def split(dataset: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset]:
    if plan.strategy != "shuffle":
        return next(iter_splits(dataset, plan))
    n = dataset.n_rows
    if n < 2:
        raise ValueError("need at least two rows to split")
    n_test = holdout_size(n, plan.test_fraction)
    if n_test == 0 or n_test == n:
        raise ValueError(f"split of {n} rows at fraction {plan.test_fraction} leaves an empty side")
    perm = np.random.default_rng(plan.seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.take(train_idx), dataset.take(test_idx)


def iter_splits(dataset: Dataset, plan: SplitPlan) -> Iterator[tuple[Dataset, Dataset]]:
    if plan.strategy == "shuffle":
        yield split(dataset, plan)
        return
    n = dataset.n_rows
    if n < plan.k:
        raise ValueError(f"cannot make {plan.k} folds from {n} rows")
    perm = np.random.default_rng(plan.seed).permutation(n)
    for fold in np.array_split(perm, plan.k):
        mask = np.zeros(n, dtype=bool)
        mask[fold] = True
        yield dataset.take(np.flatnonzero(~mask)), dataset.take(np.flatnonzero(mask))


# --- cross-validation -----------------------------------------------------


class LeakageError(AssertionError):
    pass


def check_isolation(prep: Preprocessing, train: Dataset, test: Dataset) -> None:
    """Raise if fitted parameters touched a test row or differ from a train-only refit."""
    test_ids = set(test.row_ids)
    if prep.fitted_rows & test_ids:
        raise LeakageError(f"{len(prep.fitted_rows & test_ids)} test rows used to fit preprocessing")
    if not prep.fitted_rows <= set(train.row_ids):
        raise LeakageError("preprocessing fitted on rows outside the training fold")
    refit = fit_preprocessing(train, prep.impute, prep.normalization is not None)
    if refit.impute_means != prep.impute_means or refit.normalization != prep.normalization:
        raise LeakageError("preprocessing parameters differ from a train-only refit")


def train_with_preprocessing(
    train: Dataset,
    spec: ModelSpec,
    impute: str = "mean",
    normalize: bool = True,
    seed: int = 0,
    **solver,
) -> TrainedModel:
    """Fit preprocessing on ``train`` only, then the model on the transformed rows."""
    if normalize and train.scaling_state.normalized:
        normalize = False
    prep = fit_preprocessing(train, impute, normalize)
    fitted = apply_preprocessing(train, prep)
    model = fit_model(fitted, spec, seed=seed, **solver)
    return replace(model, preprocessing=prep, input_state=train.scaling_state)


@dataclass
class CvCell:
    spec_index: int
    plan_index: int
    spec_id: str
    plan_id: str
    metric: str
    score: float
    converged: bool
    leak: bool = False
    error: Optional[str] = None
    fold_scores: list = field(default_factory=list)


def _run_cell(args) -> CvCell:
    dataset, si, spec, pi, plan, metric, impute, normalize, check_leaks, solver = args
    scorer = METRICS[metric]
    cell = CvCell(si, pi, format_spec(spec), plan.plan_id, metric, float("nan"), True)
    try:
        for train, test in iter_splits(dataset, plan):
            model = train_with_preprocessing(train, spec, impute, normalize, seed=plan.seed, **solver)
            if check_leaks:
                try:
                    check_isolation(model.preprocessing, train, test)
                except LeakageError as exc:
                    cell.leak = True
                    logger.error("leak in %s / %s: %s", cell.spec_id, cell.plan_id, exc)
            prepared = apply_preprocessing(test, model.preprocessing)
            pred = predict(model, prepared.matrix)
            cell.fold_scores.append(scorer(pred, prepared.targets))
            cell.converged = cell.converged and bool(model.training_meta.get("converged", True))
        cell.score = float(np.mean(cell.fold_scores))
    except Exception as exc:  # noqa: BLE001 - failures are recorded in-cell
        cell.error = f"{type(exc).__name__}: {exc}"
        cell.converged = False
        logger.warning("cell %s / %s failed: %s", cell.spec_id, cell.plan_id, cell.error)
    return cell


def cross_validate(
    dataset: Dataset,
    specs: Sequence[ModelSpec],
    plans: Sequence[SplitPlan],
    metric: str = "mae",
    impute: str = "mean",
    normalize: bool = True,
    check_leaks: bool = True,
    jobs: int = 1,
    **solver,
) -> list[CvCell]:
    """Train and score every (spec, plan) cell.

    Preprocessing is refit inside each training fold. Output is ordered by spec
    index then plan index regardless of ``jobs``.
    """
    if not specs:
        raise ValueError("need at least one model spec")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    tasks = [
        (dataset, si, spec, pi, plan, metric, impute, normalize, check_leaks, solver)
        for si, spec in enumerate(specs)
        for pi, plan in enumerate(plans)
    ]
    if jobs is None or jobs <= 0:
        jobs = os.cpu_count() or 1
    if jobs == 1 or len(tasks) == 1:
        cells = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    return sorted(cells, key=lambda c: (c.spec_index, c.plan_index))


def write_grid_csv(cells: Sequence[CvCell], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spec_id", "plan_id", "metric", "score", "converged"])
        for c in cells:
            score = "" if math.isnan(c.score) else repr(c.score)
            w.writerow([c.spec_id, c.plan_id, c.metric, score, str(c.converged).lower()])


# --- information criteria -------------------------------------------------


def _rss(model: TrainedModel, dataset: Dataset) -> tuple[float, int]:
    pred = predict(model, dataset)
    resid = pred - dataset.targets
    return float(resid @ resid), dataset.n_rows


def _log_term(rss: float, n: int) -> float:
    if rss <= 0.0:
        logger.warning("zero residual sum of squares; information criterion is -inf")
        return -math.inf
    return n * math.log(rss / n)


def aic(model: TrainedModel, dataset: Dataset) -> float:
    """Gaussian-residual AIC: n ln(RSS / n) + 2k."""
    rss, n = _rss(model, dataset)
    return _log_term(rss, n) + 2 * model.n_parameters


def bic(model: TrainedModel, dataset: Dataset) -> float:
    rss, n = _rss(model, dataset)
    return _log_term(rss, n) + model.n_parameters * math.log(n)


def aic_guided_lambda(dataset: Dataset, grid: Sequence[float] = DEFAULT_LASSO_GRID, **solver) -> float:
    """Grid point whose LASSO fit has the lowest AIC; ties go to the larger lambda."""
    if not grid:
        raise ValueError("lambda grid is empty")
    best = None
    for lam in sorted(grid, reverse=True):
        try:
            model = fit_lasso(dataset, lam, **solver)
            score = aic(model, dataset)
        except (ValueError, ArithmeticError) as exc:
            logger.warning("lambda=%g skipped: %s", lam, exc)
            continue
        if best is None or score < best[0]:
            best = (score, lam)
    if best is None:
        raise ValueError("every lambda in the grid failed to fit")
    return best[1]


# --- mutual information ---------------------------------------------------


def equal_frequency_bins(values: np.ndarray, bins: int = DEFAULT_MI_BINS) -> np.ndarray:
    """Bin codes from quantile edges; tied values always share a bin."""
    values = np.asarray(values, dtype=float)
    edges = np.unique(np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, values, side="right")


def mutual_information(x, y, bins: int = DEFAULT_MI_BINS) -> float:
    """Plug-in MI estimate (nats) between equal-frequency binnings of ``x`` and ``y``."""
    bx = equal_frequency_bins(x, bins)
    by = equal_frequency_bins(y, bins)
    n = len(bx)
    joint = np.zeros((bx.max() + 1, by.max() + 1))
    np.add.at(joint, (bx, by), 1.0)
    pxy = joint / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))


def mutual_information_scores(dataset: Dataset, bins: int = DEFAULT_MI_BINS) -> np.ndarray:
    if dataset.has_missing():
        raise ValueError("impute missing values before ranking features")
    return np.array([mutual_information(dataset.matrix[:, j], dataset.targets, bins) for j in range(dataset.n_cols)])


def mutual_information_topk(dataset: Dataset, k: int, bins: int = DEFAULT_MI_BINS) -> list[int]:
    if not 1 <= k <= dataset.n_cols:
        raise ValueError(f"k must lie in [1, {dataset.n_cols}], got {k}")
    scores = mutual_information_scores(dataset, bins)
    # stable sort on -score keeps lower indices first among ties
    order = np.argsort(-scores, kind="stable")
    return [int(j) for j in order[:k]]


def select_columns(dataset: Dataset, columns: Sequence[int]) -> Dataset:
    cols = list(columns)
    params = dataset.normalization_params
    if params is not None:
        params = NormalizationParams(
            tuple(params.mean[j] for j in cols),
            tuple(params.min[j] for j in cols),
            tuple(params.max[j] for j in cols),
        )
    return replace(
        dataset,
        matrix=dataset.matrix[:, cols],
        column_names=tuple(dataset.column_names[j] for j in cols),
        normalization_params=params,
    )
