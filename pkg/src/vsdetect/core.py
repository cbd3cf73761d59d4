"""Domain types shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidArgumentError


class ViolenceClass(str, Enum):
    BLOOD = "Blood"
    COLD_ARMS = "ColdArms"
    EXPLOSIONS = "Explosions"
    FIGHTS = "Fights"
    FIRE = "Fire"
    FIREARMS = "Firearms"
    GUNSHOTS = "Gunshots"
    SCREAMS = "Screams"

    @property
    def token(self) -> str:
        """Lowercase name used in annotation files."""
        return self.value.lower()

    @classmethod
    def from_token(cls, token: str) -> "ViolenceClass":
        for member in cls:
            if member.token == token.lower() or member.value == token:
                return member
        raise ValueError(f"unknown violence class {token!r}")


# Canonical order; per-class arrays are indexed by position in this tuple.
VIOLENCE_CLASSES: tuple[ViolenceClass, ...] = tuple(ViolenceClass)

NON_VIOLENT = "NonViolent"


class FeatureChannel(str, Enum):
    AUDIO = "audio"
    BLOOD = "blood"
    MOTION = "motion"
    CONCEPTS = "concepts"


CHANNELS: tuple[FeatureChannel, ...] = tuple(FeatureChannel)

# None means the dimension is set per dataset.
CHANNEL_DIMS: dict[FeatureChannel, int | None] = {
    FeatureChannel.AUDIO: 22,
    FeatureChannel.BLOOD: 14,
    FeatureChannel.MOTION: 24,
    FeatureChannel.CONCEPTS: None,
}


@dataclass(frozen=True)
class Segment:
    """One second of video: frames ``[start_frame, end_frame)``."""

    video_id: str
    index: int
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise InvalidArgumentError(
                f"segment start {self.start_frame} must precede end {self.end_frame}"
            )

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame

    def frames(self) -> range:
        return range(self.start_frame, self.end_frame)


@dataclass(frozen=True)
class Annotation:
    """A violent scene; unlike segments, ``end_frame`` is inclusive."""

    start_frame: int
    end_frame: int
    classes: frozenset[ViolenceClass] = frozenset()
    multiple_action: bool = False

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise InvalidArgumentError(
                f"annotation start {self.start_frame} after end {self.end_frame}"
            )
        object.__setattr__(self, "classes", frozenset(self.classes))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    channel: FeatureChannel
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        expected = CHANNEL_DIMS[self.channel]
        if expected is not None and values.size != expected:
            raise InvalidArgumentError(
                f"{self.channel.value} feature must have {expected} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError(f"{self.channel.value} feature has non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.channel == other.channel and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.channel, self.values.tobytes()))


@dataclass(frozen=True)
class SegmentScoreRecord:
    """Fused per-class scores of one segment plus both decisions.

    ``label`` is the top class when its score is at least 0.5 and
    ``NON_VIOLENT`` otherwise; ``binary`` requires the top score to be
    strictly above 0.5. The two rules disagree only at exactly 0.5.
    """

    segment: Segment
    class_scores: Mapping[ViolenceClass, float]
    label: str
    binary: bool
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        scores = {ViolenceClass(c): float(s) for c, s in self.class_scores.items()}
        if not scores:
            raise InvalidArgumentError("class_scores must not be empty")
        for cls, s in scores.items():
            if not 0.0 <= s <= 1.0:
                raise InvalidArgumentError(f"score for {cls.value} outside [0, 1]: {s}")
        object.__setattr__(self, "class_scores", scores)
        top_class, top = argmax_class(scores)
        expected_label = top_class.value if top >= 0.5 else NON_VIOLENT
        label = self.label.value if isinstance(self.label, ViolenceClass) else self.label
        if label != expected_label:
            raise InvalidArgumentError(f"label {label!r} inconsistent with scores ({expected_label!r})")
        if bool(self.binary) != (top > 0.5):
            raise InvalidArgumentError("binary decision inconsistent with scores")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "binary", bool(self.binary))

    def to_json(self) -> dict:
        return {
            "video_id": self.segment.video_id,
            "index": self.segment.index,
            "start_frame": self.segment.start_frame,
            "end_frame": self.segment.end_frame,
            "class_scores": {c.value: s for c, s in self.class_scores.items()},
            "label": self.label,
            "binary": self.binary,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SegmentScoreRecord":
        seg = Segment(obj["video_id"], int(obj["index"]), int(obj["start_frame"]), int(obj["end_frame"]))
        return cls(
            segment=seg,
            class_scores={ViolenceClass(k): float(v) for k, v in obj["class_scores"].items()},
            label=obj["label"],
            binary=bool(obj["binary"]),
        )


def argmax_class(scores: Mapping[ViolenceClass, float]) -> tuple[ViolenceClass, float]:
    """Highest-scoring class; ties go to the earlier class in canonical order."""
    best, best_score = None, -np.inf
    for cls in VIOLENCE_CLASSES:
        if cls in scores and scores[cls] > best_score:
            best, best_score = cls, scores[cls]
    if best is None:
        raise InvalidArgumentError("no class scores given")
    return best, float(best_score)


def frames_per_segment(fps: float) -> int:
    if not fps > 0:
        raise InvalidArgumentError(f"fps must be positive, got {fps}")
    return max(1, int(round(fps)))


def segmentize(frame_count: int, fps: float, video_id: str = "") -> list[Segment]:
    """Split a video into consecutive one-second segments.

    Each segment spans ``round(fps)`` frames. A trailing partial second is
    dropped.
    """
    n = frames_per_segment(fps)
    if frame_count < 0:
        raise InvalidArgumentError(f"frame_count must be non-negative, got {frame_count}")
    return [Segment(video_id, i, i * n, (i + 1) * n) for i in range(frame_count // n)]


def label_segments(
    segments: Iterable[Segment], annotations: Iterable[Annotation]
) -> list[tuple[Segment, frozenset[ViolenceClass]]]:
    """Attach ground-truth classes to segments.

    A segment gets class C when at least half of its frames fall inside
    annotations carrying C. Frames are unioned across annotations of the
    same class, so annotation order never matters.
    """
    annotations = list(annotations)
    out = []
    for seg in segments:
        covered: dict[ViolenceClass, np.ndarray] = {}
        for ann in annotations:
            lo = max(seg.start_frame, ann.start_frame)
            hi = min(seg.end_frame, ann.end_frame + 1)
            if lo >= hi:
                continue
            for cls in ann.classes:
                mask = covered.setdefault(cls, np.zeros(seg.length, dtype=bool))
                mask[lo - seg.start_frame : hi - seg.start_frame] = True
        labels = frozenset(c for c, m in covered.items() if 2 * int(m.sum()) >= seg.length)
        out.append((seg, labels))
    return out


def violent_segments(segments: Iterable[Segment], annotations: Iterable[Annotation]) -> list[bool]:
    """Binary ground truth: at least half the segment lies inside any annotation.

    Unlike :func:`label_segments` this also counts annotations without a
    class (generic violence).
    """
    annotations = list(annotations)
    out = []
    for seg in segments:
        mask = np.zeros(seg.length, dtype=bool)
        for ann in annotations:
            lo = max(seg.start_frame, ann.start_frame)
            hi = min(seg.end_frame, ann.end_frame + 1)
            if lo < hi:
                mask[lo - seg.start_frame : hi - seg.start_frame] = True
        out.append(2 * int(mask.sum()) >= seg.length)
    return out
