"""Core data types shared by every pipeline stage."""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

AGE_MIN = 10
AGE_MAX = 99

#: Missing-value sentinel inside a Dataset matrix. Serialized as an empty CSV cell.
MISSING = float("nan")

DEFAULT_REFERENCE_DATE = dt.date(2017, 1, 1)

FIXED_COLUMNS = (
    "friends_count",
    "followers_count",
    "popular_friends_count",
    "mean_friends_followers_count",
    "median_friends_followers_count",
    "mean_friends_age",
    "median_friends_age",
)
N_FIXED = len(FIXED_COLUMNS)
POPULAR_COUNT_COLUMN = FIXED_COLUMNS.index("popular_friends_count")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    screen_name: str = ""
    name: str = ""
    description: str = ""
    followers_count: int = 0
    friends_count: int = 0
    friend_ids: tuple[str, ...] = ()
    extracted_age: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "user_id", str(self.user_id))
        object.__setattr__(self, "friend_ids", tuple(str(f) for f in self.friend_ids))
        if self.followers_count < 0:
            raise ValueError(f"followers_count must be >= 0, got {self.followers_count}")
        if self.friends_count < 0:
            raise ValueError(f"friends_count must be >= 0, got {self.friends_count}")
        if self.extracted_age is not None and not AGE_MIN <= self.extracted_age <= AGE_MAX:
            raise ValueError(
                f"extracted_age must lie in [{AGE_MIN}, {AGE_MAX}], got {self.extracted_age}"
            )

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "screen_name": self.screen_name,
            "name": self.name,
            "description": self.description,
            "followers_count": self.followers_count,
            "friends_count": self.friends_count,
            "friend_ids": list(self.friend_ids),
            "extracted_age": self.extracted_age,
        }


def age_at(birth_date: dt.date, reference_date: dt.date) -> int:
    """Whole years elapsed between ``birth_date`` and ``reference_date`` (birthday semantics)."""
    years = reference_date.year - birth_date.year
    if (reference_date.month, reference_date.day) < (birth_date.month, birth_date.day):
        years -= 1
    return years


@dataclass(frozen=True)
class PopularUser:
    user_id: str
    screen_name: str = ""
    kb_entity_uri: Optional[str] = None
    kb_types: frozenset = frozenset()
    birth_date: Optional[dt.date] = None
    age_years: Optional[int] = None
    followers_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "user_id", str(self.user_id))
        object.__setattr__(self, "kb_types", frozenset(self.kb_types))
        if (self.age_years is None) != (self.birth_date is None):
            raise ValueError("age_years must be present exactly when birth_date is present")
        if self.kb_types and self.kb_entity_uri is None:
            raise ValueError("kb_types given without a kb_entity_uri")
        if self.followers_count < 0:
            raise ValueError(f"followers_count must be >= 0, got {self.followers_count}")

    @classmethod
    def from_entity(
        cls,
        user_id: str,
        screen_name: str,
        followers_count: int,
        kb_entity_uri: Optional[str],
        kb_types: Iterable[str] = (),
        birth_date: Optional[dt.date] = None,
        reference_date: dt.date = DEFAULT_REFERENCE_DATE,
    ) -> "PopularUser":
        age = age_at(birth_date, reference_date) if birth_date is not None else None
        return cls(
            user_id=user_id,
            screen_name=screen_name,
            kb_entity_uri=kb_entity_uri,
            kb_types=frozenset(kb_types),
            birth_date=birth_date,
            age_years=age,
            followers_count=followers_count,
        )

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "screen_name": self.screen_name,
            "kb_entity_uri": self.kb_entity_uri,
            "kb_types": sorted(self.kb_types),
            "birth_date": self.birth_date.isoformat() if self.birth_date else None,
            "age_years": self.age_years,
            "followers_count": self.followers_count,
        }


@dataclass(frozen=True)
class TypeVocabulary:
    """Ordered KB type URIs; position in ``types`` is the column offset."""

    types: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if len(set(self.types)) != len(self.types):
            raise ValueError("duplicate type URI in vocabulary")

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def index(self, type_uri: str) -> int:
        return self._lookup[type_uri]

    def items(self) -> list[tuple[str, int]]:
        return [(t, i) for i, t in enumerate(self.types)]

    @property
    def _lookup(self) -> dict[str, int]:
        # cached on first use; the dataclass is frozen so bypass __setattr__
        try:
            return self.__dict__["_lookup_cache"]
        except KeyError:
            lookup = {t: i for i, t in enumerate(self.types)}
            self.__dict__["_lookup_cache"] = lookup
            return lookup


class ScalingState(str, enum.Enum):
    RAW = "Raw"
    INTERACTION_SCALED = "InteractionScaled"
    NORMALIZED = "Normalized"
    INTERACTION_SCALED_AND_NORMALIZED = "InteractionScaledAndNormalized"

    @property
    def normalized(self) -> bool:
        return self in (ScalingState.NORMALIZED, ScalingState.INTERACTION_SCALED_AND_NORMALIZED)

    @property
    def interaction_scaled(self) -> bool:
        return self in (
            ScalingState.INTERACTION_SCALED,
            ScalingState.INTERACTION_SCALED_AND_NORMALIZED,
        )

    def with_normalization(self) -> "ScalingState":
        if self.normalized:
            raise ValueError(f"dataset already normalized (state {self.value})")
        if self is ScalingState.RAW:
            return ScalingState.NORMALIZED
        return ScalingState.INTERACTION_SCALED_AND_NORMALIZED

    def without_normalization(self) -> "ScalingState":
        if self is ScalingState.NORMALIZED:
            return ScalingState.RAW
        if self is ScalingState.INTERACTION_SCALED_AND_NORMALIZED:
            return ScalingState.INTERACTION_SCALED
        return self


@dataclass(frozen=True)
class NormalizationParams:
    mean: tuple[float, ...]
    min: tuple[float, ...]
    max: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.mean)

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "NormalizationParams":
        return cls(tuple(obj["mean"]), tuple(obj["min"]), tuple(obj["max"]))


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        if arr.size:
            arr = arr.reshape(-1, 1) if ndim == 2 else arr.reshape(-1)
        else:
            arr = arr.reshape((0,) * ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, targets and the metadata needed to reproduce its scaling.

    ``row_ids`` identifies each row (user ids from the featurizer); parameter
    fitting records which rows it read so train/test isolation can be checked.
    """

    matrix: np.ndarray
    targets: np.ndarray
    column_names: tuple[str, ...]
    scaling_state: ScalingState = ScalingState.RAW
    normalization_params: Optional[NormalizationParams] = None
    row_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        matrix = _frozen_array(self.matrix, 2)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "targets", _frozen_array(self.targets, 1))
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "scaling_state", ScalingState(self.scaling_state))
        if not self.row_ids:
            object.__setattr__(self, "row_ids", tuple(str(i) for i in range(matrix.shape[0])))
        else:
            object.__setattr__(self, "row_ids", tuple(str(r) for r in self.row_ids))

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def has_missing(self) -> bool:
        return bool(np.isnan(self.matrix).any())

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(
            self,
            matrix=self.matrix[rows],
            targets=self.targets[rows],
            row_ids=tuple(self.row_ids[i] for i in rows),
        )

    def with_matrix(self, matrix: np.ndarray, **changes) -> "Dataset":
        return replace(self, matrix=matrix, **changes)

    def column_index(self, name: str) -> int:
        return self.column_names.index(name)


def validate_dataset(dataset: Dataset) -> list[str]:
    """Return the list of invariant violations; empty when the dataset is consistent."""
    problems = []
    n_rows, n_cols = dataset.matrix.shape
    if n_rows != len(dataset.targets):
        problems.append(f"row/target mismatch: {n_rows} rows vs {len(dataset.targets)} targets")
    if n_cols != len(dataset.column_names):
        problems.append(
            f"column/name mismatch: {n_cols} columns vs {len(dataset.column_names)} names"
        )
    if len(dataset.row_ids) != n_rows:
        problems.append(f"row_ids length {len(dataset.row_ids)} != {n_rows} rows")
    if dataset.scaling_state.normalized:
        params = dataset.normalization_params
        if params is None:
            problems.append("scaling_state is normalized but normalization_params missing")
        elif len(params) != n_cols:
            problems.append(f"normalization_params cover {len(params)} of {n_cols} columns")
    return problems


class ModelKind(str, enum.Enum):
    OLS = "ols"
    LASSO = "lasso"
    ELASTIC_NET = "enet"
    SVR_LINEAR = "svr-linear"
    SVR_RBF = "svr-rbf"
    BASELINE_MEAN = "baseline"


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus its hyperparameters.

    ``gamma=None`` on an RBF spec means "choose from the training matrix".
    """

    kind: ModelKind
    lam: Optional[float] = None
    l1_ratio: Optional[float] = None
    c: Optional[float] = None
    epsilon: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        for name in ("lam", "c", "gamma"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite positive number, got {value}")
        if self.epsilon is not None and not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.l1_ratio is not None and not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")
        if self.kind in (ModelKind.LASSO, ModelKind.ELASTIC_NET) and self.lam is None:
            raise ValueError(f"{self.kind.value} requires lambda")
        if self.kind is ModelKind.ELASTIC_NET and self.l1_ratio is None:
            raise ValueError("enet requires l1_ratio")

    @classmethod
    def ols(cls) -> "ModelSpec":
        return cls(ModelKind.OLS)

    @classmethod
    def lasso(cls, lam: float) -> "ModelSpec":
        return cls(ModelKind.LASSO, lam=lam)

    @classmethod
    def elastic_net(cls, lam: float, l1_ratio: float) -> "ModelSpec":
        return cls(ModelKind.ELASTIC_NET, lam=lam, l1_ratio=l1_ratio)

    @classmethod
    def svr_linear(cls, c: float = 1.0, epsilon: float = 0.1) -> "ModelSpec":
        return cls(ModelKind.SVR_LINEAR, c=c, epsilon=epsilon)

    @classmethod
    def svr_rbf(cls, c: float = 1.0, epsilon: float = 0.1, gamma: Optional[float] = None) -> "ModelSpec":
        return cls(ModelKind.SVR_RBF, c=c, epsilon=epsilon, gamma=gamma)

    @classmethod
    def baseline(cls) -> "ModelSpec":
        return cls(ModelKind.BASELINE_MEAN)


@dataclass(frozen=True)
class EvalReport:
    mae: float
    medae: float
    r2: float
    accuracy_curve: tuple[tuple[int, float], ...]
    residuals: tuple[float, ...]
    predicted_vs_expected: tuple[tuple[float, float], ...]
    n: int = 0
    model: str = ""

    def accuracy(self, bound: int) -> float:
        for b, acc in self.accuracy_curve:
            if b == bound:
                return acc
        raise KeyError(f"bound {bound} not in accuracy curve")
