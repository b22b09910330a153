"""Epsilon-insensitive support vector regression solved by SMO.

The dual is written over 2n variables ``a = (alpha, alpha_star)`` with signs
``s = (+1, ..., -1, ...)``:

    min  1/2 a^T Q a + p^T a    s.t.  s^T a = 0,  0 <= a <= C

where ``Q_tu = s_t s_u K(x_t, x_u)``, ``p = (eps - y, eps + y)``. The model is
``f(x) = sum_i (alpha_i - alpha_star_i) K(x_i, x) + b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..domain import Dataset, ModelKind, ModelSpec
from .base import TrainedModel
from .linear import check_trainable

logger = logging.getLogger(__name__)

DEFAULT_C = 1.0
DEFAULT_EPSILON = 0.1
_TAU = 1e-12
# Above this many training rows the full kernel matrix is not cached.
_FULL_KERNEL_LIMIT = 8000


@dataclass(frozen=True)
class KernelSpec:
    """``gamma is None`` means the linear kernel."""

    gamma: Optional[float] = None

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"RBF gamma must be > 0, got {self.gamma}")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(None)

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(float(gamma))

    @property
    def is_linear(self) -> bool:
        return self.gamma is None


def kernel_matrix(A: np.ndarray, B: np.ndarray, gamma: Optional[float]) -> np.ndarray:
    """K(a_i, b_j); linear when ``gamma`` is None, else exp(-gamma * ||a - b||^2)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    dot = A @ B.T
    if gamma is None:
        return dot
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * dot
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def default_gamma(matrix: np.ndarray) -> float:
    """1 / (n_cols * variance of all entries); 1.0 when that variance is zero."""
    var = float(np.var(matrix))
    n_cols = matrix.shape[1]
    if var <= 0 or n_cols == 0:
        return 1.0
    return 1.0 / (n_cols * var)


class _KernelRows:
    def __init__(self, X: np.ndarray, gamma: Optional[float]):
        self.X = X
        self.gamma = gamma
        n = X.shape[0]
        self.full = kernel_matrix(X, X, gamma) if n <= _FULL_KERNEL_LIMIT else None
        self._cache: dict[int, np.ndarray] = {}
        if self.full is not None:
            self.diag = np.diag(self.full).copy()
        elif gamma is None:
            self.diag = (X * X).sum(axis=1)
        else:
            self.diag = np.ones(n)

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self._cache.get(i)
        if r is None:
            if len(self._cache) > 2048:
                self._cache.clear()
            r = kernel_matrix(self.X[i : i + 1], self.X, self.gamma)[0]
            self._cache[i] = r
        return r


def _smo(K: _KernelRows, y: np.ndarray, c: float, eps: float, tol: float, max_iter: int):
    n = len(y)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    grad = np.concatenate([eps - y, eps + y])
    qd = np.concatenate([K.diag, K.diag])
    pos = sign > 0
    converged = False
    it = 0
    for it in range(max_iter + 1):
        minus_yg = -sign * grad
        up = np.where(pos, a < c, a > 0)
        low = np.where(pos, a > 0, a < c)
        if not up.any() or not low.any():
            converged = True
            break
        cand_up = np.where(up, minus_yg, -np.inf)
        cand_low = np.where(low, minus_yg, np.inf)
        # argmax/argmin return the lowest index among ties
        i = int(np.argmax(cand_up))
        j = int(np.argmin(cand_low))
        if cand_up[i] - cand_low[j] < tol:
            converged = True
            break
        if it == max_iter:
            break
        ki = K.row(i % n)
        kj = K.row(j % n)
        qi = sign[i] * np.concatenate([ki, -ki])  # row i of Q
        qj = sign[j] * np.concatenate([kj, -kj])
        old_i, old_j = a[i], a[j]
        if sign[i] != sign[j]:
            quad = qd[i] + qd[j] + 2.0 * qi[j]
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > c:
                    a[i] = c
                    a[j] = c - diff
            elif a[j] > c:
                a[j] = c
                a[i] = c + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * qi[j]
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > c:
                if a[i] > c:
                    a[i] = c
                    a[j] = total - c
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > c:
                if a[j] > c:
                    a[j] = c
                    a[i] = total - c
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        d_i = a[i] - old_i
        d_j = a[j] - old_j
        grad += qi * d_i + qj * d_j
    return a, grad, sign, converged, it


def _intercept(a, grad, sign, c) -> float:
    """b = -rho with rho averaged over free variables (midpoint of the feasible range otherwise)."""
    yg = sign * grad
    at_upper = a >= c
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
        lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
        ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    return -rho


def fit_svr(
    dataset: Dataset,
    kernel: KernelSpec,
    c: float = DEFAULT_C,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = 1e-4,
    max_iter: int = 1_000_000,
    seed: int = 0,
    spec: Optional[ModelSpec] = None,
) -> TrainedModel:
    """Fit epsilon-SVR with SMO, selecting the maximal KKT-violating pair each step.

    Normalized features are strongly recommended. ``tol`` bounds the final
    KKT violation (the gap between the selected pair).
    """
    if not c > 0:
        raise ValueError(f"C must be > 0, got {c}")
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    check_trainable(dataset)
    X = np.asarray(dataset.matrix, dtype=float)
    y = np.asarray(dataset.targets, dtype=float)
    n = len(y)
    K = _KernelRows(X, kernel.gamma)
    a, grad, sign, converged, iterations = _smo(K, y, c, epsilon, tol, max_iter)
    if not converged:
        logger.warning("SMO hit max_iter=%d before reaching tol=%g", max_iter, tol)
    intercept = _intercept(a, grad, sign, c)
    beta = a[:n] - a[n:]
    support = np.flatnonzero(beta != 0.0)
    if spec is None:
        spec = (
            ModelSpec.svr_linear(c, epsilon)
            if kernel.is_linear
            else ModelSpec.svr_rbf(c, epsilon, kernel.gamma)
        )
    coef = X[support].T @ beta[support] if kernel.is_linear else None
    return TrainedModel(
        spec=spec,
        intercept=float(intercept),
        coefficients=coef,
        dual_coefficients=beta[support].copy(),
        support_vectors=X[support].copy(),
        gamma=kernel.gamma,
        column_names=dataset.column_names,
        fit_state=dataset.scaling_state,
        input_state=dataset.scaling_state,
        training_meta={
            "n_train": n,
            "seed": seed,
            "converged": converged,
            "iterations": iterations,
            "n_support": int(len(support)),
            "support_indices": support.tolist(),
        },
    )


def svr_kernel_for(spec: ModelSpec, matrix: np.ndarray) -> KernelSpec:
    if spec.kind is ModelKind.SVR_LINEAR:
        return KernelSpec.linear()
    gamma = spec.gamma if spec.gamma is not None else default_gamma(matrix)
    return KernelSpec.rbf(gamma)
