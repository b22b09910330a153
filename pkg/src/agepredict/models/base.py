"""Trained-model container, spec strings, prediction and JSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..domain import Dataset, ModelKind, ModelSpec, ScalingState, validate_dataset
from ..featurize import Preprocessing, apply_preprocessing

FORMAT_TAG = "agepredict.model/v1"

SPEC_GRAMMAR = """\
model SPEC forms (hyperparameters are comma separated key=value pairs):
  baseline
  ols
  lasso:lambda=L
  enet:lambda=L,l1_ratio=R
  svr:kernel=linear[,c=C][,eps=E]
  svr:kernel=rbf[,c=C][,eps=E][,gamma=G]
defaults: c=1.0, eps=0.1, gamma=1/(n_cols * var(matrix))"""


class SpecError(ValueError):
    pass


_KEY_ALIASES = {
    "lambda": "lam",
    "lam": "lam",
    "alpha": "lam",
    "l1_ratio": "l1_ratio",
    "c": "c",
    "eps": "epsilon",
    "epsilon": "epsilon",
    "gamma": "gamma",
}


def parse_spec(text: str) -> ModelSpec:
    """Parse the command-line model mini-language (see ``SPEC_GRAMMAR``)."""
    head, _, tail = text.strip().partition(":")
    head = head.strip().lower()
    params = {}
    kernel = None
    if tail.strip():
        for item in tail.split(","):
            key, eq, value = item.partition("=")
            key = key.strip().lower()
            if not eq:
                raise SpecError(f"malformed hyperparameter {item!r} in {text!r}\n{SPEC_GRAMMAR}")
            if key == "kernel":
                kernel = value.strip().lower()
                continue
            if key not in _KEY_ALIASES:
                raise SpecError(f"unknown hyperparameter {key!r} in {text!r}\n{SPEC_GRAMMAR}")
            try:
                params[_KEY_ALIASES[key]] = float(value)
            except ValueError:
                raise SpecError(f"hyperparameter {key} needs a number, got {value!r}\n{SPEC_GRAMMAR}") from None

    allowed = {
        "baseline": set(),
        "ols": set(),
        "lasso": {"lam"},
        "enet": {"lam", "l1_ratio"},
        "svr": {"c", "epsilon", "gamma"},
    }
    if head not in allowed:
        raise SpecError(f"unknown model {head!r}\n{SPEC_GRAMMAR}")
    extra = set(params) - allowed[head]
    if extra:
        raise SpecError(f"{head} does not take {sorted(extra)}\n{SPEC_GRAMMAR}")
    try:
        if head == "baseline":
            return ModelSpec.baseline()
        if head == "ols":
            return ModelSpec.ols()
        if head == "lasso":
            if "lam" not in params:
                raise SpecError(f"lasso needs lambda\n{SPEC_GRAMMAR}")
            return ModelSpec.lasso(params["lam"])
        if head == "enet":
            if "lam" not in params or "l1_ratio" not in params:
                raise SpecError(f"enet needs lambda and l1_ratio\n{SPEC_GRAMMAR}")
            return ModelSpec.elastic_net(params["lam"], params["l1_ratio"])
        c = params.get("c", 1.0)
        eps = params.get("epsilon", 0.1)
        if kernel in (None, "rbf"):
            return ModelSpec.svr_rbf(c, eps, params.get("gamma"))
        if kernel == "linear":
            if "gamma" in params:
                raise SpecError(f"gamma only applies to the rbf kernel\n{SPEC_GRAMMAR}")
            return ModelSpec.svr_linear(c, eps)
        raise SpecError(f"unknown kernel {kernel!r}\n{SPEC_GRAMMAR}")
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(f"{exc}\n{SPEC_GRAMMAR}") from None


def format_spec(spec: ModelSpec) -> str:
    k = spec.kind
    if k is ModelKind.BASELINE_MEAN:
        return "baseline"
    if k is ModelKind.OLS:
        return "ols"
    if k is ModelKind.LASSO:
        return f"lasso:lambda={spec.lam!r}"
    if k is ModelKind.ELASTIC_NET:
        return f"enet:lambda={spec.lam!r},l1_ratio={spec.l1_ratio!r}"
    kernel = "linear" if k is ModelKind.SVR_LINEAR else "rbf"
    out = f"svr:kernel={kernel},c={spec.c!r},eps={spec.epsilon!r}"
    if spec.gamma is not None:
        out += f",gamma={spec.gamma!r}"
    return out


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Learned parameters for one ModelSpec.

    Linear models use ``coefficients``; SVR uses ``dual_coefficients`` over
    ``support_vectors`` (with ``gamma`` for RBF); the baseline only has
    ``mean_value``. ``preprocessing`` holds train-fitted imputation and
    normalization, applied by :func:`predict` to inputs in ``input_state``.
    """

    spec: ModelSpec
    intercept: float
    coefficients: Optional[np.ndarray] = None
    dual_coefficients: Optional[np.ndarray] = None
    support_vectors: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    mean_value: Optional[float] = None
    column_names: tuple[str, ...] = ()
    fit_state: ScalingState = ScalingState.RAW
    input_state: ScalingState = ScalingState.RAW
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    training_meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.column_names)

    @property
    def n_parameters(self) -> int:
        """Effective parameter count used by the information criteria (intercept included)."""
        kind = self.spec.kind
        if kind is ModelKind.BASELINE_MEAN:
            return 1
        if kind in (ModelKind.SVR_LINEAR, ModelKind.SVR_RBF):
            return int(len(self.support_vectors)) + 1
        return int(np.count_nonzero(self.coefficients)) + 1

    def decision(self, matrix: np.ndarray) -> np.ndarray:
        """Raw model output on a matrix already in ``fit_state``."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        kind = self.spec.kind
        if kind is ModelKind.BASELINE_MEAN:
            return np.full(matrix.shape[0], self.mean_value, dtype=float)
        if matrix.shape[1] != self.n_features:
            raise ValueError(f"matrix has {matrix.shape[1]} columns, model expects {self.n_features}")
        if np.isnan(matrix).any():
            raise ValueError("matrix contains missing values")
        if kind in (ModelKind.SVR_LINEAR, ModelKind.SVR_RBF):
            from .svr import kernel_matrix

            if len(self.dual_coefficients) == 0:
                return np.full(matrix.shape[0], self.intercept)
            K = kernel_matrix(matrix, self.support_vectors, self.gamma)
            return K @ self.dual_coefficients + self.intercept
        return matrix @ self.coefficients + self.intercept


def _prepare(model: TrainedModel, data: Dataset) -> Dataset:
    problems = validate_dataset(data)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems))
    if data.column_names != model.column_names:
        missing = [c for c in model.column_names if c not in data.column_names]
        unexpected = [c for c in data.column_names if c not in model.column_names]
        raise SchemaMismatch(missing, unexpected)
    if data.scaling_state is model.input_state and not model.preprocessing.is_identity:
        return apply_preprocessing(data, model.preprocessing)
    if data.scaling_state is model.fit_state:
        return data
    raise ValueError(
        f"scaling state mismatch: model trained on {model.input_state.value} input "
        f"(fitted as {model.fit_state.value}), got {data.scaling_state.value}"
    )


class SchemaMismatch(ValueError):
    def __init__(self, missing, unexpected):
        self.missing = list(missing)
        self.unexpected = list(unexpected)
        msg = "column schema mismatch"
        if self.missing:
            msg += f"; missing columns: {self.missing}"
        if self.unexpected:
            msg += f"; unexpected columns: {self.unexpected}"
        if not self.missing and not self.unexpected:
            msg += "; same columns in a different order"
        super().__init__(msg)


def predict(model: TrainedModel, data: Union[Dataset, np.ndarray]) -> np.ndarray:
    """Predict ages.

    A bare array is taken to be in the model's fitted state. A Dataset in the
    model's input state first goes through the stored preprocessing; any other
    state is an error.
    """
    if isinstance(data, Dataset):
        return model.decision(_prepare(model, data).matrix)
    return model.decision(np.asarray(data, dtype=float))


def prepare_for_model(model: TrainedModel, data: Dataset) -> Dataset:
    """The dataset as the model sees it (rows may drop under the 'drop' impute strategy)."""
    return _prepare(model, data)


# --- serialization --------------------------------------------------------


def _float_list(arr) -> Optional[list]:
    if arr is None:
        return None
    return np.asarray(arr, dtype=float).tolist()


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def model_to_json(model: TrainedModel) -> dict:
    spec = model.spec
    return {
        "format": FORMAT_TAG,
        "spec": {
            "kind": spec.kind.value,
            "string": format_spec(spec),
            "lambda": spec.lam,
            "l1_ratio": spec.l1_ratio,
            "c": spec.c,
            "epsilon": spec.epsilon,
            "gamma": spec.gamma,
        },
        "intercept": float(model.intercept),
        "coefficients": _float_list(model.coefficients),
        "dual_coefficients": _float_list(model.dual_coefficients),
        "support_vectors": _float_list(model.support_vectors),
        "gamma": model.gamma,
        "mean_value": model.mean_value,
        "column_names": list(model.column_names),
        "fit_state": model.fit_state.value,
        "input_state": model.input_state.value,
        "preprocessing": model.preprocessing.to_json(),
        "training_meta": _clean(model.training_meta),
    }


def model_from_json(obj: dict) -> TrainedModel:
    if obj.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model format {obj.get('format')!r}; expected {FORMAT_TAG}")
    s = obj["spec"]
    spec = ModelSpec(
        ModelKind(s["kind"]),
        lam=s.get("lambda"),
        l1_ratio=s.get("l1_ratio"),
        c=s.get("c"),
        epsilon=s.get("epsilon"),
        gamma=s.get("gamma"),
    )

    def arr(key, ndim=1):
        v = obj.get(key)
        if v is None:
            return None
        a = np.array(v, dtype=float)
        if ndim == 2 and a.size == 0:
            a = a.reshape(0, len(obj["column_names"]))
        return a

    return TrainedModel(
        spec=spec,
        intercept=float(obj["intercept"]),
        coefficients=arr("coefficients"),
        dual_coefficients=arr("dual_coefficients"),
        support_vectors=arr("support_vectors", 2),
        gamma=obj.get("gamma"),
        mean_value=obj.get("mean_value"),
        column_names=tuple(obj["column_names"]),
        fit_state=ScalingState(obj["fit_state"]),
        input_state=ScalingState(obj["input_state"]),
        preprocessing=Preprocessing.from_json(obj["preprocessing"]),
        training_meta=obj.get("training_meta", {}),
    )


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def with_preprocessing(model: TrainedModel, prep: Preprocessing, input_state: ScalingState) -> TrainedModel:
    return replace(model, preprocessing=prep, input_state=input_state)
