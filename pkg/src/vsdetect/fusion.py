"""Late fusion of channel probabilities.

Each violence class has its own convex weights over the four channel
probabilities (audio, blood, motion, concepts). Weights are chosen per class
by exhaustive search over a simplex lattice, minimizing the EER of the fused
score on held-out data.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CHANNELS,
    NON_VIOLENT,
    VIOLENCE_CLASSES,
    FeatureChannel,
    ViolenceClass,
    argmax_class,
)
from .errors import DegenerateDataError, FormatError, IncompleteInputError, InvalidArgumentError
from .metrics import eer as compute_eer

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.05
UNIFORM_WEIGHTS = (0.25, 0.25, 0.25, 0.25)
WEIGHTS_FORMAT_VERSION = 1
_TIE_TOLERANCE = 1e-12


def _resolution(step: float) -> int:
    if not 0 < step <= 1:
        raise InvalidArgumentError(f"step must lie in (0, 1], got {step}")
    n = 1.0 / step
    k = int(round(n))
    if abs(n - k) > 1e-9:
        raise InvalidArgumentError(f"1/step must be an integer, got {n}")
    return k


def check_weights(weights: Sequence[float], step: float | None = DEFAULT_STEP) -> tuple[float, ...]:
    """Validate one 4-tuple: entries in [0, 1], sum 1, multiples of ``step``."""
    w = tuple(float(v) for v in weights)
    if len(w) != len(CHANNELS):
        raise InvalidArgumentError(f"need {len(CHANNELS)} weights, got {len(w)}")
    if any(not 0.0 <= v <= 1.0 for v in w):
        raise InvalidArgumentError(f"weights must lie in [0, 1]: {w}")
    if abs(sum(w) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"weights must sum to 1: {w}")
    if step is not None:
        n = _resolution(step)
        if any(abs(v * n - round(v * n)) > 1e-9 for v in w):
            raise InvalidArgumentError(f"weights {w} are not multiples of {step}")
    return w


@dataclass
class FusionWeights:
    weights: dict[ViolenceClass, tuple[float, float, float, float]]
    step: float | None = DEFAULT_STEP
    provenance: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = {ViolenceClass(c): check_weights(w, self.step) for c, w in self.weights.items()}
        missing = [c.value for c in VIOLENCE_CLASSES if c not in self.weights]
        if missing:
            raise InvalidArgumentError(f"missing weights for {', '.join(missing)}")

    def __getitem__(self, cls: ViolenceClass) -> tuple[float, ...]:
        return self.weights[ViolenceClass(cls)]

    def matrix(self) -> np.ndarray:
        """``(8, 4)`` array in canonical class and channel order."""
        return np.array([self.weights[c] for c in VIOLENCE_CLASSES])

    def to_json(self) -> dict:
        return {
            "format_version": WEIGHTS_FORMAT_VERSION,
            "step": self.step,
            "channels": [c.value for c in CHANNELS],
            "weights": {c.value: list(self.weights[c]) for c in VIOLENCE_CLASSES},
            "provenance": self.provenance,
            "report": self.report,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FusionWeights":
        if obj.get("format_version", WEIGHTS_FORMAT_VERSION) != WEIGHTS_FORMAT_VERSION:
            raise FormatError(f"unsupported weights format {obj.get('format_version')!r}")
        return cls(
            weights={ViolenceClass(k): tuple(v) for k, v in obj["weights"].items()},
            step=obj.get("step"),
            provenance=obj.get("provenance") or {},
            report=obj.get("report") or {},
        )


def save_weights(weights: FusionWeights, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(weights.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_weights(path: str | os.PathLike) -> FusionWeights:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path=path) from None
    try:
        return FusionWeights.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad weights file: {exc}", path=path) from None


def _channel_values(scores) -> list[float]:
    if isinstance(scores, Mapping):
        missing = [c.value for c in CHANNELS if scores.get(c) is None and scores.get(c.value) is None]
        if missing:
            raise IncompleteInputError(f"missing channel scores: {', '.join(missing)}")
        return [float(scores[c] if scores.get(c) is not None else scores[c.value]) for c in CHANNELS]
    values = [float(v) for v in scores]
    if len(values) != len(CHANNELS) or any(np.isnan(values)):
        raise IncompleteInputError(f"expected {len(CHANNELS)} channel scores, got {values}")
    return values


def fuse(scores, weights: Sequence[float]) -> float:
    """Weighted sum of the four channel probabilities.

    Terms are summed in decimal on the shortest repr of each input and
    rounded once, so decimal-lattice weights give the decimal answer.
    """
    values = _channel_values(scores)
    w = check_weights(weights, step=None)
    total = sum((Decimal(repr(a)) * Decimal(repr(b)) for a, b in zip(w, values)), Decimal(0))
    return min(1.0, max(0.0, float(total)))


def enumerate_weight_grid(step: float = DEFAULT_STEP) -> list[tuple[float, float, float, float]]:
    """All 4-tuples of multiples of ``step`` summing to 1, in lexicographic order."""
    n = _resolution(step)
    return [tuple(k / n for k in units) for units in _grid_units(n)]


def _grid_units(n: int) -> list[tuple[int, int, int, int]]:
    return [
        (a, b, c, n - a - b - c)
        for a, b, c in itertools.product(range(n + 1), repeat=3)
        if a + b + c <= n
    ]


@dataclass
class ClassSearchResult:
    weights: tuple[float, float, float, float]
    eer: float | None
    tuples_evaluated: int
    skipped: bool = False

    def to_json(self) -> dict:
        return {
            "weights": list(self.weights),
            "eer": self.eer,
            "tuples_evaluated": self.tuples_evaluated,
            "skipped": self.skipped,
        }


def search_class_weights(channel_scores: np.ndarray, truth: np.ndarray, step: float = DEFAULT_STEP) -> ClassSearchResult:
    """Minimum-EER simplex tuple for one class; ties keep the earliest tuple."""
    channel_scores = np.asarray(channel_scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if channel_scores.ndim != 2 or channel_scores.shape[1] != len(CHANNELS):
        raise InvalidArgumentError(f"channel scores must have shape (n, {len(CHANNELS)})")
    if not np.all(np.isfinite(channel_scores)):
        raise IncompleteInputError("channel scores contain missing values")
    if truth.all() or not truth.any():
        raise DegenerateDataError("ground truth has a single label")
    grid = enumerate_weight_grid(step)
    fused = channel_scores @ np.array(grid).T
    eers = np.array([compute_eer(fused[:, k], truth) for k in range(len(grid))])
    best = int(np.argmax(eers <= eers.min() + _TIE_TOLERANCE))
    return ClassSearchResult(grid[best], float(eers[best]), len(grid))


def weight_search(
    channel_scores,
    truth,
    step: float = DEFAULT_STEP,
    *,
    provenance: dict | None = None,
) -> FusionWeights:
    """Per-class weight search.

    ``channel_scores`` is ``(n, 4)`` in channel order; ``truth`` maps each
    class to a boolean array of length n (or is an ``(n, 8)`` array). A
    class whose ground truth has a single label is skipped with a warning
    and gets uniform weights.
    """
    channel_scores = np.asarray(channel_scores, dtype=np.float64)
    if channel_scores.shape[0] == 0:
        raise InvalidArgumentError("empty validation set")
    if not isinstance(truth, Mapping):
        arr = np.asarray(truth, dtype=bool)
        truth = {c: arr[:, i] for i, c in enumerate(VIOLENCE_CLASSES)}
    n_tuples = len(enumerate_weight_grid(step))
    weights = {}
    report = {}
    for cls in VIOLENCE_CLASSES:
        labels = truth.get(cls)
        try:
            if labels is None:
                raise DegenerateDataError("no ground truth")
            res = search_class_weights(channel_scores, labels, step)
        except DegenerateDataError as exc:
            logger.warning("%s: %s; using uniform weights", cls.value, exc)
            res = ClassSearchResult(UNIFORM_WEIGHTS, None, n_tuples, skipped=True)
        weights[cls] = res.weights
        report[cls.value] = res.to_json()
    return FusionWeights(weights, step, provenance=dict(provenance or {}), report=report)


def class_scores(scores, weights: FusionWeights) -> dict[ViolenceClass, float]:
    return {cls: fuse(scores, weights[cls]) for cls in VIOLENCE_CLASSES}


def decide_multiclass(scores, weights: FusionWeights) -> tuple[str, dict[ViolenceClass, float]]:
    """Top class if its fused score is at least 0.5, else ``NonViolent``."""
    per_class = class_scores(scores, weights)
    return decide_label(per_class), per_class


def decide_label(per_class: Mapping[ViolenceClass, float]) -> str:
    top, value = argmax_class(per_class)
    return top.value if value >= 0.5 else NON_VIOLENT


def decide_binary(per_class) -> bool:
    """Violent iff some class score strictly exceeds 0.5."""
    values = list(per_class.values()) if isinstance(per_class, Mapping) else list(per_class)
    if not values:
        raise InvalidArgumentError("no class scores")
    return max(values) > 0.5


def channel_matrix(rows: Sequence[Mapping[FeatureChannel, float]]) -> np.ndarray:
    """Stack per-segment channel score mappings into an ``(n, 4)`` array (NaN when missing)."""
    out = np.full((len(rows), len(CHANNELS)), np.nan)
    for i, row in enumerate(rows):
        for j, ch in enumerate(CHANNELS):
            v = row.get(ch)
            if v is not None:
                out[i, j] = v
    return out
