"""Annotations, feature tables, splits and balanced sampling."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import CHANNELS, Annotation, FeatureChannel, Segment, ViolenceClass
from .errors import FormatError, InvalidArgumentError, ParseError, ShortageError

MULTIPLE_ACTION_TOKEN = "multiple_action"


def parse_annotation_text(text: str, path=None) -> list[Annotation]:
    """Parse lines of ``<start> <end> [class ...] [multiple_action]``.

    Frames are inclusive. Blank lines and ``#`` comments are skipped.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise ParseError("expected '<start_frame> <end_frame> [classes...]'", path=path, line=lineno)
        try:
            start, end = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(f"bad frame numbers {tokens[0]!r} {tokens[1]!r}", path=path, line=lineno) from None
        if start > end:
            raise ParseError(f"start frame {start} after end frame {end}", path=path, line=lineno)
        if start < 0:
            raise ParseError("negative frame number", path=path, line=lineno)
        classes = set()
        multiple = False
        for tok in tokens[2:]:
            if tok == MULTIPLE_ACTION_TOKEN:
                multiple = True
                continue
            try:
                classes.add(ViolenceClass.from_token(tok))
            except ValueError:
                raise ParseError(f"unknown token {tok!r}", path=path, line=lineno) from None
        out.append(Annotation(start, end, frozenset(classes), multiple))
    return out


def parse_annotations(path: str | os.PathLike) -> list[Annotation]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotation_text(fh.read(), path=path)


def serialize_annotations(annotations: Iterable[Annotation]) -> str:
    lines = []
    for ann in annotations:
        tokens = [str(ann.start_frame), str(ann.end_frame)]
        tokens += [c.token for c in ViolenceClass if c in ann.classes]
        if ann.multiple_action:
            tokens.append(MULTIPLE_ACTION_TOKEN)
        lines.append(" ".join(tokens))
    return "".join(line + "\n" for line in lines)


def write_annotations(path: str | os.PathLike, annotations: Iterable[Annotation]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_annotations(annotations))


@dataclass
class FeatureRow:
    """One segment of the feature table."""

    video_id: str
    index: int
    start_frame: int
    end_frame: int
    features: dict[FeatureChannel, np.ndarray] = field(default_factory=dict)
    labels: frozenset[ViolenceClass] = frozenset()
    violent: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return self.video_id, self.index

    @property
    def segment(self) -> Segment:
        return Segment(self.video_id, self.index, self.start_frame, self.end_frame)

    @property
    def complete(self) -> bool:
        return all(self.features.get(c) is not None for c in CHANNELS)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "index": self.index,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "features": {c.value: [float(v) for v in self.features[c]] for c in CHANNELS if self.features.get(c) is not None},
            "labels": [c.value for c in ViolenceClass if c in self.labels],
            "violent": self.violent,
            "incomplete": not self.complete,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureRow":
        return cls(
            video_id=str(obj["video_id"]),
            index=int(obj["index"]),
            start_frame=int(obj["start_frame"]),
            end_frame=int(obj["end_frame"]),
            features={FeatureChannel(k): np.asarray(v, dtype=np.float64) for k, v in obj.get("features", {}).items()},
            labels=frozenset(ViolenceClass(c) for c in obj.get("labels", [])),
            violent=bool(obj.get("violent", bool(obj.get("labels")))),
        )


def write_feature_table(path: str | os.PathLike, rows: Iterable[FeatureRow], meta: dict | None = None) -> None:
    """JSON Lines; an optional first line ``{"_meta": {...}}`` carries provenance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row.to_json()) + "\n")


def read_feature_table(path: str | os.PathLike) -> tuple[dict, list[FeatureRow]]:
    meta: dict = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if "_meta" in obj:
                    meta = obj["_meta"]
                    continue
                rows.append(FeatureRow.from_json(obj))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad feature row: {exc}", path=path, line=lineno) from None
    return meta, rows


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    test_ids: tuple[str, ...] = ()

    def __post_init__(self):
        parts = [tuple(self.train_ids), tuple(self.validation_ids), tuple(self.test_ids)]
        object.__setattr__(self, "train_ids", parts[0])
        object.__setattr__(self, "validation_ids", parts[1])
        object.__setattr__(self, "test_ids", parts[2])
        seen: set[str] = set()
        for part in parts:
            overlap = seen.intersection(part)
            if overlap:
                raise InvalidArgumentError(f"split parts overlap on {sorted(overlap)}")
            seen.update(part)

    def part(self, name: str) -> tuple[str, ...]:
        try:
            return {"train": self.train_ids, "validation": self.validation_ids, "test": self.test_ids}[name]
        except KeyError:
            raise InvalidArgumentError(f"unknown split part {name!r}") from None

    def to_json(self) -> dict:
        return {"train": list(self.train_ids), "validation": list(self.validation_ids), "test": list(self.test_ids)}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(tuple(obj["train"]), tuple(obj["validation"]), tuple(obj.get("test", ())))


def load_split(path: str | os.PathLike) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            return SplitSpec.from_json(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"bad split file: {exc}", path=path) from None


@dataclass
class SampledSet:
    entries: list[FeatureRow]
    seed: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.violent for r in self.entries], dtype=bool)

    def matrix(self, channel: FeatureChannel) -> np.ndarray:
        return np.array([r.features[channel] for r in self.entries], dtype=np.float64)


def _draw(pool: list[FeatureRow], k: int, label: str, rng: np.random.Generator) -> list[FeatureRow]:
    if len(pool) < k:
        raise ShortageError(label, len(pool), k)
    picks = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(picks)]


def balanced_sample(
    rows: Sequence[FeatureRow],
    train_ids: Iterable[str],
    test_ids: Iterable[str],
    n_train: int = 2000,
    n_test: int = 3000,
    seed: int = 0,
) -> tuple[SampledSet, SampledSet]:
    """Draw label-balanced train and test sets from disjoint video groups.

    Each set holds ``n/2`` violent and ``n/2`` non-violent segments,
    sampled uniformly without replacement.
    """
    train_ids, test_ids = set(train_ids), set(test_ids)
    if train_ids & test_ids:
        raise InvalidArgumentError("train and test videos overlap")
    for n in (n_train, n_test):
        if n <= 0 or n % 2:
            raise InvalidArgumentError(f"sample sizes must be positive and even, got {n}")
    ordered = sorted(rows, key=lambda r: r.key)
    rng = np.random.default_rng(seed)
    out = []
    for ids, n, name in ((train_ids, n_train, "train"), (test_ids, n_test, "test")):
        pos = [r for r in ordered if r.video_id in ids and r.violent]
        neg = [r for r in ordered if r.video_id in ids and not r.violent]
        chosen = _draw(pos, n // 2, f"positive ({name})", rng) + _draw(neg, n // 2, f"negative ({name})", rng)
        chosen.sort(key=lambda r: r.key)
        out.append(SampledSet(chosen, seed))
    return out[0], out[1]
