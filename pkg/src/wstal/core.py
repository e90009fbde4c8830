"""Segments, interval algebra, rasterization and duration statistics.

Everything here works on plain values: a :class:`Segment` is an immutable
interval in seconds, a label sequence is an integer numpy vector where 0 is
the null class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Interval = tuple[float, float]


class AmbiguousGroundTruth(ValueError):
    """Raised when ground-truth segments of different classes overlap."""


@dataclass(frozen=True, order=False)
class Segment:
    class_id: int
    start: float
    end: float
    score: float | None = None
    sequence_id: str = ""

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 1:
            raise ValueError(f"class_id must be an integer >= 1, got {self.class_id!r}")
        if not self.start >= 0:
            raise ValueError(f"segment start must be >= 0, got {self.start!r}")
        if not self.end > self.start:
            raise ValueError(f"segment end must exceed start, got [{self.start}, {self.end}]")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score!r}")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def interval(self) -> Interval:
        return (self.start, self.end)

    def replace(self, **changes) -> "Segment":
        values = dict(class_id=self.class_id, start=self.start, end=self.end,
                      score=self.score, sequence_id=self.sequence_id)
        values.update(changes)
        return Segment(**values)


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    subject_id: str
    fps: float
    duration: float
    channels: int
    num_classes: int
    gt: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gt", tuple(self.gt))
        if self.fps <= 0 or self.duration <= 0:
            raise ValueError("fps and duration must be positive")
        if self.channels < 1 or self.num_classes < 1:
            raise ValueError("channels and num_classes must be >= 1")
        for seg in self.gt:
            if seg.end > self.duration + 1e-9:
                raise ValueError(f"gt segment {seg.interval} exceeds duration {self.duration}")
            if seg.class_id > self.num_classes:
                raise ValueError(f"gt class {seg.class_id} outside 1..{self.num_classes}")
        check_gt_overlap(self.gt)

    @property
    def num_frames(self) -> int:
        return num_frames(self.duration, self.fps)


@dataclass(frozen=True)
class DurationProfile:
    min: float
    p5: float
    median: float
    p95: float
    max: float

    def as_dict(self) -> dict[str, float]:
        return {"min": self.min, "p5": self.p5, "median": self.median,
                "p95": self.p95, "max": self.max}


def num_frames(duration: float, fps: float) -> int:
    return int(round(duration * fps))


def frame_times(duration: float, fps: float) -> np.ndarray:
    """Sample time of every frame; frame t sits at t / fps."""
    return np.arange(num_frames(duration, fps)) / fps


def frame_span(start: float, end: float, times: np.ndarray) -> tuple[int, int]:
    # half-open: frame t is inside [start, end) iff start <= t/fps < end
    lo = int(np.searchsorted(times, start, side="left"))
    hi = int(np.searchsorted(times, end, side="left"))
    return lo, hi


def intervals_overlap(a: Interval, b: Interval) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def check_gt_overlap(segments: Iterable[Segment]) -> None:
    ordered = sorted(segments, key=lambda s: (s.start, s.end))
    # sweep keeping the furthest-reaching segment per class seen so far
    active: list[Segment] = []
    for seg in ordered:
        active = [a for a in active if a.end > seg.start]
        for other in active:
            if other.class_id != seg.class_id and intervals_overlap(other.interval, seg.interval):
                raise AmbiguousGroundTruth(
                    f"ambiguous ground truth: class {other.class_id} {other.interval} "
                    f"overlaps class {seg.class_id} {seg.interval}")
        active.append(seg)


def rasterize(segments: Sequence[Segment], fps: float, duration: float) -> np.ndarray:
    """Convert segments to a per-frame label vector of length round(duration*fps).

    Scored segments are predictions: where they overlap, the highest score
    wins (ties go to the lower class id). If any segment is unscored the set
    is treated as ground truth and cross-class overlap is an error.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    times = frame_times(duration, fps)
    labels = np.zeros(len(times), dtype=np.int64)
    if not segments:
        return labels
    for seg in segments:
        if seg.end > duration + 1e-9:
            raise ValueError(f"segment {seg.interval} exceeds duration {duration}")

    if any(seg.score is None for seg in segments):
        check_gt_overlap(segments)
        order = list(segments)
    else:
        # paint lowest priority first so the winner is written last
        order = sorted(segments, key=lambda s: (s.score, -s.class_id))
    for seg in order:
        lo, hi = frame_span(seg.start, seg.end, times)
        labels[lo:hi] = seg.class_id
    return labels


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True in a boolean vector as half-open (lo, hi) pairs."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(lo), int(hi)) for lo, hi in zip(edges[::2], edges[1::2])]


def tiou(a: Interval, b: Interval) -> float:
    """Temporal IoU of two intervals; 0 when they are disjoint or touch."""
    if not (a[1] > a[0] and b[1] > b[0]):
        raise ValueError(f"intervals must have end > start: {a}, {b}")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def tiou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise tIoU between rows of two (n, 2) interval arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    inter = (np.minimum(a[:, None, 1], b[None, :, 1])
             - np.maximum(a[:, None, 0], b[None, :, 0])).clip(min=0)
    union = np.maximum(a[:, None, 1], b[None, :, 1]) - np.minimum(a[:, None, 0], b[None, :, 0])
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def bag_label(record: SequenceRecord) -> np.ndarray:
    y = np.zeros(record.num_classes, dtype=np.int64)
    for seg in record.gt:
        y[seg.class_id - 1] = 1
    return y


def profile_durations(segments: Iterable[Segment | float]) -> DurationProfile:
    durations = np.array([s.duration if isinstance(s, Segment) else float(s) for s in segments])
    if durations.size == 0:
        raise ValueError("cannot profile an empty list of segments")
    q = np.percentile(durations, [0, 5, 50, 95, 100], method="linear")
    return DurationProfile(*(float(v) for v in q))
