"""Feature matrix construction, interactional scaling, normalization and imputation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .domain import (
    FIXED_COLUMNS,
    MISSING,
    N_FIXED,
    Dataset,
    NormalizationParams,
    PopularUser,
    ScalingState,
    TypeVocabulary,
    UserRecord,
)

logger = logging.getLogger(__name__)

PopularIndex = Mapping[str, PopularUser]

IMPUTE_STRATEGIES = ("none", "mean", "drop")


def build_index(popular: Iterable[PopularUser]) -> dict[str, PopularUser]:
    """Keep only users linked to a KB entity; those are the popular ones."""
    index = {}
    for p in popular:
        if p.kb_entity_uri is None:
            continue
        if p.user_id in index:
            raise ValueError(f"duplicate popular user id {p.user_id}")
        index[p.user_id] = p
    return index


def build_vocabulary(index: PopularIndex) -> TypeVocabulary:
    types = set()
    for p in index.values():
        types.update(p.kb_types)
    return TypeVocabulary(tuple(sorted(types)))


def column_names(vocab: TypeVocabulary) -> tuple[str, ...]:
    return FIXED_COLUMNS + tuple(vocab.types)


def _median(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def featurize_user(user: UserRecord, index: PopularIndex, vocab: TypeVocabulary) -> np.ndarray:
    friends = []
    for fid in set(user.friend_ids):
        p = index.get(fid)
        if p is None or p.user_id != fid:
            continue
        friends.append(p)
    friends.sort(key=lambda p: p.user_id)

    row = np.full(N_FIXED + len(vocab), MISSING)
    row[0] = user.friends_count
    row[1] = user.followers_count
    row[2] = len(friends)
    if friends:
        followers = [p.followers_count for p in friends]
        row[3] = float(np.mean(followers))
        row[4] = _median(followers)
        ages = [p.age_years for p in friends if p.age_years is not None]
        if ages:
            row[5] = float(np.mean(ages))
            row[6] = _median(ages)
    row[N_FIXED:] = 0.0
    for p in friends:
        for t in p.kb_types:
            try:
                row[N_FIXED + vocab.index(t)] += 1.0
            except KeyError:
                pass
    return row


def build_dataset(
    users: Sequence[UserRecord],
    index: PopularIndex,
    vocab: TypeVocabulary,
    require_age: bool = True,
) -> Dataset:
    """Featurize every user into one Raw dataset.

    With ``require_age`` users lacking an extracted age are left out; otherwise
    their target is the missing sentinel (scoring mode).
    """
    rows, targets, ids = [], [], []
    for user in users:
        if user.extracted_age is None and require_age:
            continue
        rows.append(featurize_user(user, index, vocab))
        targets.append(MISSING if user.extracted_age is None else float(user.extracted_age))
        ids.append(user.user_id)
    names = column_names(vocab)
    matrix = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return Dataset(matrix, np.array(targets, dtype=float), names, ScalingState.RAW, None, tuple(ids))


def type_column_indices(dataset: Dataset, vocab: TypeVocabulary) -> np.ndarray:
    return np.array([dataset.column_index(t) for t in vocab.types], dtype=int)


def apply_interactional_scaling(dataset: Dataset, vocab: TypeVocabulary) -> Dataset:
    """Turn each type count into the fraction of the user's popular friends carrying that type."""
    if dataset.scaling_state is not ScalingState.RAW:
        raise ValueError(f"interactional scaling needs a Raw dataset, got {dataset.scaling_state.value}")
    pop_col = dataset.column_index("popular_friends_count")
    cols = type_column_indices(dataset, vocab)
    matrix = np.array(dataset.matrix, copy=True)
    pop = matrix[:, pop_col]
    counts = matrix[:, cols]
    if (pop < 0).any() or (counts < 0).any():
        raise ValueError("negative counts in feature matrix")
    scaled = np.zeros_like(counts)
    has = pop > 0
    scaled[has] = counts[has] / pop[has, None]
    matrix[:, cols] = scaled
    return dataset.with_matrix(matrix, scaling_state=ScalingState.INTERACTION_SCALED)


# --- normalization --------------------------------------------------------


def fit_normalization(matrix: np.ndarray) -> NormalizationParams:
    if np.isnan(matrix).any():
        raise ValueError("cannot normalize a matrix containing missing values")
    if matrix.shape[0] == 0:
        raise ValueError("cannot fit normalization on zero rows")
    return NormalizationParams(
        mean=tuple(float(v) for v in matrix.mean(axis=0)),
        min=tuple(float(v) for v in matrix.min(axis=0)),
        max=tuple(float(v) for v in matrix.max(axis=0)),
    )


def apply_normalization(matrix: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """(x - mean) / (max - min) per column; zero-range columns become 0."""
    mean = np.asarray(params.mean)
    span = np.asarray(params.max) - np.asarray(params.min)
    if matrix.shape[1] != len(mean):
        raise ValueError(f"matrix has {matrix.shape[1]} columns, params cover {len(mean)}")
    out = np.zeros_like(matrix, dtype=float)
    ok = span > 0
    out[:, ok] = (matrix[:, ok] - mean[ok]) / span[ok]
    return out


def min_max_normalize(dataset: Dataset) -> Dataset:
    if dataset.scaling_state.normalized:
        raise ValueError(f"dataset already normalized (state {dataset.scaling_state.value})")
    params = fit_normalization(dataset.matrix)
    span = np.asarray(params.max) - np.asarray(params.min)
    constant = [dataset.column_names[j] for j in np.flatnonzero(span <= 0)]
    if constant:
        logger.warning("%d constant column(s) normalized to zero: %s", len(constant), constant[:5])
    return dataset.with_matrix(
        apply_normalization(dataset.matrix, params),
        scaling_state=dataset.scaling_state.with_normalization(),
        normalization_params=params,
    )


# --- missing values -------------------------------------------------------


def column_means(matrix: np.ndarray, names: Sequence[str] = ()) -> np.ndarray:
    missing = np.isnan(matrix)
    counts = (~missing).sum(axis=0)
    if matrix.shape[0] and (counts == 0).any():
        bad = [names[j] if j < len(names) else str(j) for j in np.flatnonzero(counts == 0)]
        raise ValueError(f"cannot mean-impute all-missing column(s): {bad}")
    sums = np.where(missing, 0.0, matrix).sum(axis=0)
    return sums / np.maximum(counts, 1)


def fill_missing(matrix: np.ndarray, means: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(matrix), np.asarray(means)[None, :], matrix)


def impute_missing(dataset: Dataset, strategy: str) -> Dataset:
    if strategy == "mean":
        means = column_means(dataset.matrix, dataset.column_names)
        return dataset.with_matrix(fill_missing(dataset.matrix, means))
    if strategy == "drop":
        keep = ~np.isnan(dataset.matrix).any(axis=1)
        return dataset.take(np.flatnonzero(keep))
    raise ValueError(f"unknown impute strategy {strategy!r}; expected 'mean' or 'drop'")


# --- train-fitted preprocessing -------------------------------------------


@dataclass(frozen=True)
class Preprocessing:
    """Imputation and normalization parameters fitted on one set of rows.

    ``fitted_rows`` records exactly which rows were read while fitting, which
    is what the cross-validation leak check inspects.
    """

    impute: str = "none"
    impute_means: Optional[tuple[float, ...]] = None
    normalization: Optional[NormalizationParams] = None
    fitted_rows: frozenset = frozenset()

    @property
    def is_identity(self) -> bool:
        return self.impute == "none" and self.normalization is None

    def to_json(self) -> dict:
        return {
            "impute": self.impute,
            "impute_means": None if self.impute_means is None else list(self.impute_means),
            "normalization": None if self.normalization is None else self.normalization.to_json(),
            "n_fitted_rows": len(self.fitted_rows),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Preprocessing":
        norm = obj.get("normalization")
        means = obj.get("impute_means")
        return cls(
            impute=obj.get("impute", "none"),
            impute_means=None if means is None else tuple(means),
            normalization=None if norm is None else NormalizationParams.from_json(norm),
        )


def fit_preprocessing(train: Dataset, impute: str = "mean", normalize: bool = True) -> Preprocessing:
    if impute not in IMPUTE_STRATEGIES:
        raise ValueError(f"unknown impute strategy {impute!r}")
    if normalize and train.scaling_state.normalized:
        raise ValueError("training data is already normalized")
    matrix = train.matrix
    rows = list(range(train.n_rows))
    means = None
    if impute == "mean":
        means = column_means(matrix, train.column_names)
        matrix = fill_missing(matrix, means)
        means = tuple(float(m) for m in means)
    elif impute == "drop":
        keep = ~np.isnan(matrix).any(axis=1)
        matrix = matrix[keep]
        rows = list(np.flatnonzero(keep))
    params = fit_normalization(matrix) if normalize else None
    return Preprocessing(
        impute=impute,
        impute_means=means,
        normalization=params,
        fitted_rows=frozenset(train.row_ids[i] for i in rows),
    )


def apply_preprocessing(dataset: Dataset, prep: Preprocessing) -> Dataset:
    """Apply fitted parameters without reading anything from ``dataset`` beyond its rows."""
    out = dataset
    if prep.impute == "mean":
        out = out.with_matrix(fill_missing(out.matrix, prep.impute_means))
    elif prep.impute == "drop":
        keep = ~np.isnan(out.matrix).any(axis=1)
        if not keep.all():
            out = out.take(np.flatnonzero(keep))
    if prep.normalization is not None:
        if out.scaling_state.normalized:
            raise ValueError("dataset already normalized")
        if out.has_missing():
            raise ValueError("missing values remain; choose an impute strategy")
        out = out.with_matrix(
            apply_normalization(out.matrix, prep.normalization),
            scaling_state=out.scaling_state.with_normalization(),
            normalization_params=prep.normalization,
        )
    return out


# --- CSV export -----------------------------------------------------------


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def write_dataset(dataset: Dataset, path, vocab: Optional[TypeVocabulary] = None, extra: Optional[dict] = None) -> Path:
    """Write ``path`` (CSV) plus a ``.schema.json`` sidecar; returns the sidecar path.

    CSV layout: ``user_id``, every feature column, then ``age``. Missing values
    are empty cells; floats use the shortest round-trip repr.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("user_id",) + dataset.column_names + ("age",))
        for rid, row, target in zip(dataset.row_ids, dataset.matrix, dataset.targets):
            writer.writerow([rid] + [_fmt(v) for v in row] + [_fmt(target)])
    sidecar = schema_path(path)
    schema = {
        "column_names": list(dataset.column_names),
        "scaling_state": dataset.scaling_state.value,
        "normalization_params": (
            dataset.normalization_params.to_json() if dataset.normalization_params else None
        ),
        "vocabulary": list(vocab.types) if vocab is not None else None,
        "n_rows": dataset.n_rows,
    }
    if extra:
        schema.update(extra)
    sidecar.write_text(json.dumps(schema, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def schema_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".schema.json")


def read_dataset(path) -> tuple[Dataset, dict]:
    """Inverse of :func:`write_dataset`. The sidecar is optional (state defaults to Raw)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty matrix file")
        if header[0] != "user_id" or header[-1] != "age":
            raise ValueError(f"{path}: header must start with user_id and end with age")
        names = tuple(header[1:-1])
        ids, rows, targets = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}")
            ids.append(rec[0])
            vals = [float(c) if c != "" else MISSING for c in rec[1:]]
            rows.append(vals[:-1])
            targets.append(vals[-1])
    schema = {}
    sidecar = schema_path(path)
    if sidecar.exists():
        schema = json.loads(sidecar.read_text(encoding="utf-8"))
        if tuple(schema.get("column_names", names)) != names:
            raise ValueError(f"{sidecar}: column names disagree with {path}")
    params = schema.get("normalization_params")
    dataset = Dataset(
        matrix=np.array(rows, dtype=float).reshape(len(rows), len(names)),
        targets=np.array(targets, dtype=float),
        column_names=names,
        scaling_state=ScalingState(schema.get("scaling_state", ScalingState.RAW.value)),
        normalization_params=NormalizationParams.from_json(params) if params else None,
        row_ids=tuple(ids),
    )
    return dataset, schema


def vocabulary_from_schema(schema: Mapping, dataset: Dataset) -> TypeVocabulary:
    types = schema.get("vocabulary")
    if types is None:
        types = [n for n in dataset.column_names if n not in FIXED_COLUMNS]
    return TypeVocabulary(tuple(types))
