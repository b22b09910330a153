"""Regression metrics, error-bound accuracy, the two-sample KS test and report export."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.special import kolmogorov

from .domain import Dataset, EvalReport
from .models import TrainedModel, format_spec, predict, prepare_for_model

DEFAULT_MAX_BOUND = 10


def _pair(predicted, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {a.size} actual values")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    return p, a


def mae(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(np.mean(np.abs(p - a)))


def medae(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(np.median(np.abs(p - a)))


def r2(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    if p.size < 2:
        raise ValueError("R^2 needs at least two observations")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined: actual values have zero variance")
    ss_res = float(np.sum((a - p) ** 2))
    return 1.0 - ss_res / ss_tot


def accuracy_at(predicted, actual, bound: int) -> float:
    """Share of predictions within ``bound`` years of the truth (boundary inclusive)."""
    if bound < 0:
        raise ValueError(f"bound must be >= 0, got {bound}")
    p, a = _pair(predicted, actual)
    return float(np.mean(np.abs(p - a) <= bound))


def accuracy_curve(predicted, actual, max_bound: int = DEFAULT_MAX_BOUND) -> list[tuple[int, float]]:
    if max_bound < 0:
        raise ValueError(f"max_bound must be >= 0, got {max_bound}")
    p, a = _pair(predicted, actual)
    err = np.abs(p - a)
    return [(b, float(np.mean(err <= b))) for b in range(max_bound + 1)]


def ks_statistic(sample_a, sample_b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the pooled sample points."""
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_two_sample(sample_a, sample_b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.

    The p-value uses the Kolmogorov limiting distribution evaluated at
    ``(sqrt(m) + 0.12 + 0.11 / sqrt(m)) * D`` with ``m = n_a n_b / (n_a + n_b)``.
    """
    d = ks_statistic(sample_a, sample_b)
    n_a = np.asarray(sample_a).size
    n_b = np.asarray(sample_b).size
    m = n_a * n_b / (n_a + n_b)
    root = math.sqrt(m)
    p = float(kolmogorov((root + 0.12 + 0.11 / root) * d))
    return d, min(max(p, 0.0), 1.0)


def report_from_predictions(predicted, actual, max_bound: int = DEFAULT_MAX_BOUND, model: str = "") -> EvalReport:
    p, a = _pair(predicted, actual)
    resid = p - a
    return EvalReport(
        mae=mae(p, a),
        medae=medae(p, a),
        r2=r2(p, a) if p.size >= 2 and np.ptp(a) > 0 else float("nan"),
        accuracy_curve=tuple(accuracy_curve(p, a, max_bound)),
        residuals=tuple(float(r) for r in resid),
        predicted_vs_expected=tuple((float(x), float(y)) for x, y in zip(p, a)),
        n=int(p.size),
        model=model,
    )


def build_report(model: TrainedModel, test: Dataset, max_bound: int = DEFAULT_MAX_BOUND) -> EvalReport:
    """Score ``model`` on ``test``; residuals are predicted minus actual."""
    prepared = prepare_for_model(model, test)
    predicted = predict(model, prepared)
    return report_from_predictions(predicted, prepared.targets, max_bound, format_spec(model.spec))


def _num(v: float):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def report_to_json(report: EvalReport) -> dict:
    return {
        "model": report.model,
        "n": report.n,
        "mae": _num(report.mae),
        "medae": _num(report.medae),
        "r2": _num(report.r2),
        "accuracy_curve": [{"bound": b, "accuracy": acc} for b, acc in report.accuracy_curve],
        "residuals": list(report.residuals),
        "predicted_vs_expected": [{"predicted": p, "expected": e} for p, e in report.predicted_vs_expected],
    }


def report_from_json(obj: dict) -> EvalReport:
    return EvalReport(
        mae=obj["mae"],
        medae=obj["medae"],
        r2=float("nan") if obj["r2"] is None else obj["r2"],
        accuracy_curve=tuple((int(r["bound"]), float(r["accuracy"])) for r in obj["accuracy_curve"]),
        residuals=tuple(obj["residuals"]),
        predicted_vs_expected=tuple((r["predicted"], r["expected"]) for r in obj["predicted_vs_expected"]),
        n=obj.get("n", len(obj["residuals"])),
        model=obj.get("model", ""),
    )


def export_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Write report.json, residuals.csv and accuracy_curve.csv into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out_dir / "report.json",
            "residuals": out_dir / "residuals.csv",
            "accuracy_curve": out_dir / "accuracy_curve.csv",
        }
        paths["report"].write_text(
            json.dumps(report_to_json(report), indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        with paths["residuals"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "predicted", "actual", "residual"])
            for i, ((p, a), r) in enumerate(zip(report.predicted_vs_expected, report.residuals)):
                w.writerow([i, repr(p), repr(a), repr(r)])
        with paths["accuracy_curve"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bound", "accuracy"])
            for b, acc in report.accuracy_curve:
                w.writerow([b, repr(acc)])
    except OSError as exc:
        raise OSError(f"could not write report to {out_dir}: {exc}") from exc
    return paths


def load_report(path) -> EvalReport:
    return report_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
