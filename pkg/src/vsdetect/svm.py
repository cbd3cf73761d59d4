"""Binary soft-margin SVMs with Platt-calibrated probability outputs.

Training solves the dual problem

    min_a  1/2 a^T Q a - sum(a)   s.t.  0 <= a_i <= C,  sum(a_i y_i) = 0

with Q_ij = y_i y_j k(x_i, x_j), using SMO with second-order working-set
selection. Decision values are ``f(x) = sum_i a_i y_i k(x_i, x) + bias``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import FeatureChannel
from .errors import (
    DegenerateDataError,
    DegenerateFitError,
    FormatError,
    InvalidArgumentError,
    VsdError,
)
from .metrics import eer as compute_eer

logger = logging.getLogger(__name__)

CLASSIFIER_FORMAT_VERSION = 1
_TAU = 1e-12


class KernelKind(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"
    CHI_SQUARE = "chi_square"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    gamma: float | None = None

    def __post_init__(self):
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is KernelKind.LINEAR:
            object.__setattr__(self, "gamma", None)
        elif self.gamma is None or not self.gamma > 0:
            raise InvalidArgumentError(f"{kind.value} kernel needs gamma > 0")
        else:
            object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(KernelKind.LINEAR)

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(KernelKind.RBF, gamma)

    @classmethod
    def chi_square(cls, gamma: float) -> "KernelSpec":
        return cls(KernelKind.CHI_SQUARE, gamma)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "KernelSpec":
        return cls(KernelKind(obj["kind"]), obj.get("gamma"))

    def __str__(self):
        if self.gamma is None:
            return self.kind.value
        return f"{self.kind.value}(gamma={self.gamma:g})"


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.kind is KernelKind.LINEAR:
        return float(np.dot(x, y))
    if spec.kind is KernelKind.RBF:
        d = x - y
        return float(math.exp(-spec.gamma * float(np.dot(d, d))))
    if np.any(x < 0) or np.any(y < 0):
        raise InvalidArgumentError("chi-square kernel needs non-negative inputs")
    s = x + y
    nz = s > 0
    return float(math.exp(-spec.gamma * float(np.sum((x[nz] - y[nz]) ** 2 / s[nz]))))


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.kind is KernelKind.LINEAR:
        return a @ b.T
    if spec.kind is KernelKind.RBF:
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidArgumentError("chi-square kernel needs non-negative inputs")
    out = np.empty((a.shape[0], b.shape[0]))
    rows = max(1, 4_000_000 // max(1, b.shape[0] * a.shape[1]))
    for start in range(0, a.shape[0], rows):
        chunk = a[start : start + rows, None, :]
        s = chunk + b[None, :, :]
        d = (chunk - b[None, :, :]) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(s > 0, d / np.where(s > 0, s, 1.0), 0.0)
        out[start : start + rows] = np.exp(-spec.gamma * terms.sum(axis=2))
    return out


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 1000  # iteration cap is max_passes * n_samples
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidArgumentError("C must be positive")
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance must be positive")
        if self.max_passes <= 0:
            raise InvalidArgumentError("max_passes must be positive")


@dataclass(frozen=True, eq=False)
class TrainedClassifier:
    kernel: KernelSpec
    support_vectors: np.ndarray
    alphas_times_labels: np.ndarray
    bias: float
    platt_a: float = -1.0
    platt_b: float = 0.0
    channel: FeatureChannel | None = None
    C: float | None = None
    # optional per-feature min-max scaling applied before the kernel
    scale_min: np.ndarray | None = None
    scale_span: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        if self.scale_min is not None:
            return int(self.scale_min.size)
        return int(self.support_vectors.shape[1])

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InvalidArgumentError(f"expected {self.dim} features, got {x.shape[1]}")
        if self.scale_min is None:
            return x
        return np.clip((x - self.scale_min) / self.scale_span, 0.0, 1.0)

    def decision_function(self, x) -> np.ndarray:
        z = self.transform(x)
        if self.support_vectors.shape[0] == 0:
            return np.full(z.shape[0], self.bias)
        k = kernel_matrix(self.kernel, z, self.support_vectors)
        return k @ self.alphas_times_labels + self.bias

    def predict_proba(self, x) -> np.ndarray:
        return platt_probability(self.decision_function(x), self.platt_a, self.platt_b)

    def with_platt(self, a: float, b: float) -> "TrainedClassifier":
        return replace(self, platt_a=float(a), platt_b=float(b))

    def to_json(self) -> dict:
        return {
            "format_version": CLASSIFIER_FORMAT_VERSION,
            "channel": self.channel.value if self.channel is not None else None,
            "kernel": self.kernel.to_json(),
            "C": self.C,
            "support_vectors": self.support_vectors.tolist(),
            "coefficients": self.alphas_times_labels.tolist(),
            "bias": self.bias,
            "platt_a": self.platt_a,
            "platt_b": self.platt_b,
            "scale_min": None if self.scale_min is None else self.scale_min.tolist(),
            "scale_span": None if self.scale_span is None else self.scale_span.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedClassifier":
        if obj.get("format_version") != CLASSIFIER_FORMAT_VERSION:
            raise FormatError(f"unsupported classifier format {obj.get('format_version')!r}")
        sv = np.asarray(obj["support_vectors"], dtype=np.float64)
        coef = np.asarray(obj["coefficients"], dtype=np.float64)
        smin = obj.get("scale_min")
        span = obj.get("scale_span")
        if smin is not None:
            sv = sv.reshape(-1, len(smin))
        return cls(
            kernel=KernelSpec.from_json(obj["kernel"]),
            support_vectors=sv,
            alphas_times_labels=coef,
            bias=float(obj["bias"]),
            platt_a=float(obj["platt_a"]),
            platt_b=float(obj["platt_b"]),
            channel=FeatureChannel(obj["channel"]) if obj.get("channel") else None,
            C=obj.get("C"),
            scale_min=None if smin is None else np.asarray(smin, dtype=np.float64),
            scale_span=None if span is None else np.asarray(span, dtype=np.float64),
            meta=obj.get("meta") or {},
        )


def save_classifier(clf: TrainedClassifier, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clf.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_classifier(path: str | os.PathLike) -> TrainedClassifier:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path=path) from None
    try:
        return TrainedClassifier.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad classifier file: {exc}", path=path) from None


def _check_training_data(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.size:
        raise InvalidArgumentError("features and labels differ in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidArgumentError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateDataError("training data must contain both labels")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("training features must be finite")
    return x, y


@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    objective: float
    iterations: int
    gap: float


def solve_dual(kmat: np.ndarray, y: np.ndarray, C: float, tolerance: float = 1e-3, max_iter: int | None = None) -> DualSolution:
    """SMO on a precomputed kernel matrix (second-order working-set selection)."""
    n = y.size
    if max_iter is None:
        max_iter = 1000 * max(n, 1)
    q = (y[:, None] * y[None, :]) * kmat
    qd = np.diag(q).copy()
    kd = np.diag(kmat).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    neg = ~pos
    gap = np.inf
    it = 0
    for it in range(max_iter):
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = (pos & ~at_upper) | (neg & ~at_lower)
        low = (pos & ~at_lower) | (neg & ~at_upper)
        yg = -y * grad
        if not up.any() or not low.any():
            gap = 0.0
            break
        cand_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(cand_up))
        g_max = cand_up[i]
        g_min = float(np.min(np.where(low, yg, np.inf)))
        gap = g_max - g_min
        if gap < tolerance:
            break
        b = g_max - yg
        a = kd[i] + kd - 2.0 * kmat[i]
        a = np.where(a > 0, a, _TAU)
        score = np.where(low & (yg < g_max), -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        qi, qj = q[i], q[j]
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = qd[i] + qd[j] + 2.0 * qi[j]
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * qi[j]
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += qi * (ai - ai_old) + qj * (aj - aj_old)
    else:
        logger.warning("SMO stopped after %d iterations with gap %.3g", max_iter, gap)

    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~upper & ~lower
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (upper & neg) | (lower & pos)
        lb_mask = (upper & pos) | (lower & neg)
        ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    objective = float(0.5 * alpha @ (grad - 1.0))  # grad = Q a - 1
    return DualSolution(alpha, rho, objective, it, float(gap))


def dual_objective(kmat, y, alpha) -> float:
    q = (y[:, None] * y[None, :]) * kmat
    return float(0.5 * alpha @ q @ alpha - alpha.sum())


def fit_minmax(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span <= 0] = 1.0
    return lo, span


def train(
    x,
    y,
    kernel: KernelSpec,
    config: TrainConfig = TrainConfig(),
    *,
    channel: FeatureChannel | None = None,
    scale: bool = False,
) -> TrainedClassifier:
    """Train a binary SVM on rows of ``x`` with labels in {-1, +1}.

    With ``scale=True`` each feature is min-max scaled to [0, 1] using the
    training data; the scaling is stored in the classifier. Platt
    parameters default to ``a=-1, b=0`` until calibrated with
    :func:`platt_fit`.
    """
    x, y = _check_training_data(x, y)
    scale_min = scale_span = None
    if scale:
        scale_min, span = fit_minmax(x)
        scale_span = span
        x = (x - scale_min) / scale_span
    kmat = kernel_matrix(kernel, x, x)
    sol = solve_dual(kmat, y, config.C, config.tolerance, config.max_passes * y.size)
    sv = sol.alpha > 0
    return TrainedClassifier(
        kernel=kernel,
        support_vectors=x[sv].copy(),
        alphas_times_labels=(sol.alpha * y)[sv],
        bias=-sol.rho,
        channel=channel,
        C=config.C,
        scale_min=scale_min,
        scale_span=scale_span,
        meta={"iterations": sol.iterations, "dual_objective": sol.objective, "kkt_gap": sol.gap},
    )


def platt_probability(decision_values, a: float, b: float):
    """``1 / (1 + exp(a f + b))``, evaluated without overflow and kept inside (0, 1)."""
    f = np.asarray(decision_values, dtype=np.float64)
    z = a * f + b
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    p = np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return p if p.ndim else float(p)


def platt_fit(decision_values, labels, max_iter: int = 100) -> tuple[float, float]:
    """Fit ``P(y=1|f) = 1 / (1 + exp(a f + b))`` by regularized maximum likelihood.

    Targets are smoothed to ``(N+ + 1) / (N+ + 2)`` and ``1 / (N- + 2)``;
    the optimizer is Newton's method with backtracking line search.
    """
    f = np.asarray(decision_values, dtype=np.float64).reshape(-1)
    lab = np.asarray(labels).reshape(-1)
    positive = lab > 0 if lab.dtype != bool else lab
    if f.size != positive.size:
        raise InvalidArgumentError("decision values and labels differ in length")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("Platt fitting needs both labels")
    if np.all(f == f[0]):
        raise DegenerateFitError("all decision values are identical")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(positive, hi, lo)

    def objective(a, b):
        z = f * a + b
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1.0) * z + np.log1p(np.exp(z)))))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(a, b)
    sigma, min_step, eps = 1e-12, 1e-10, 1e-5
    for _ in range(max_iter):
        z = f * a + b
        e = np.exp(-np.abs(z))
        p = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + float(np.sum(f * f * d2))
        h22 = sigma + float(np.sum(d2))
        h21 = float(np.sum(f * d2))
        d1 = t - p
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            logger.debug("Platt line search failed")
            break
    return float(a), float(b)


def predict_proba(clf: TrainedClassifier, x):
    """Calibrated probability of the positive label for one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    p = clf.predict_proba(x)
    return float(p[0]) if x.ndim == 1 else p


DEFAULT_C_VALUES = (0.1, 1.0, 10.0, 100.0)


def default_grid(dim: int, *, allow_chi_square: bool = True, c_values: Sequence[float] = DEFAULT_C_VALUES):
    """Linear, RBF and (optionally) chi-square kernels crossed with ``c_values``."""
    gammas = (1.0 / dim, 0.1, 1.0)
    kernels = [KernelSpec.linear()] + [KernelSpec.rbf(g) for g in gammas]
    if allow_chi_square:
        kernels += [KernelSpec.chi_square(g) for g in gammas]
    return [(k, float(c)) for k in kernels for c in c_values]


@dataclass
class GridCellResult:
    kernel: KernelSpec
    C: float
    eer: float | None
    error: str | None = None

    def to_json(self) -> dict:
        return {"kernel": self.kernel.to_json(), "C": self.C, "eer": self.eer, "error": self.error}


def kernel_grid_search(
    train_set,
    validation_set,
    grid,
    config: TrainConfig = TrainConfig(),
    *,
    channel: FeatureChannel | None = None,
    scale: bool = False,
    workers: int = 1,
) -> tuple[TrainedClassifier, list[GridCellResult]]:
    """Train every ``(kernel, C)`` cell and keep the one with the lowest validation EER.

    Ties go to the earlier cell. The winner's Platt sigmoid is fitted on
    its validation decision values. A cell whose training fails is
    recorded as failed; if every cell fails the last error is raised.
    """
    grid = list(grid)
    if not grid:
        raise InvalidArgumentError("empty grid")
    x_tr, y_tr = train_set
    x_va, y_va = validation_set
    y_va = np.asarray(y_va).reshape(-1)
    val_pos = y_va > 0

    def run(cell):
        kernel, c = cell
        try:
            clf = train(x_tr, y_tr, kernel, _with_c(config, c), channel=channel, scale=scale)
            dv = clf.decision_function(x_va)
            return clf, dv, compute_eer(dv, val_pos), None
        except VsdError as exc:
            return None, None, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, grid))
    else:
        outcomes = [run(cell) for cell in grid]

    report = []
    best = None
    last_error = None
    for (kernel, c), (clf, dv, cell_eer, err) in zip(grid, outcomes):
        report.append(GridCellResult(kernel, float(c), cell_eer, None if err is None else str(err)))
        if err is not None:
            last_error = err
            continue
        if best is None or cell_eer < best[2]:
            best = (clf, dv, cell_eer)
    if best is None:
        raise last_error
    clf, dv, _ = best
    try:
        a, b = platt_fit(dv, val_pos)
    except DegenerateFitError:
        logger.warning("constant validation decision values; using a flat probability")
        rate = (val_pos.sum() + 1.0) / (val_pos.size + 2.0)
        a, b = 0.0, math.log((1.0 - rate) / rate)
    return clf.with_platt(a, b), report


def _with_c(config: TrainConfig, c: float) -> TrainConfig:
    return TrainConfig(C=c, tolerance=config.tolerance, max_passes=config.max_passes, seed=config.seed)
