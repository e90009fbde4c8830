"""Temporal NMS and the overlap-resolve / same-label merge rule."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

from .core import Segment, tiou


@dataclass(frozen=True)
class NmsConfig:
    iou_thresh: float = 0.5
    class_wise: bool = True

    def __post_init__(self):
        if not 0 < self.iou_thresh <= 1:
            raise ValueError("iou_thresh must lie in (0, 1]")


def _priority(seg: Segment):
    return (-seg.score, seg.start, seg.class_id, seg.end, seg.sequence_id)


def _output_order(seg: Segment):
    return (seg.sequence_id, seg.start, seg.end, seg.class_id, -seg.score)


def temporal_nms(segments: Iterable[Segment], cfg: NmsConfig = NmsConfig()) -> list[Segment]:
    """Greedy suppression; segments of different sequences never interact."""
    segments = list(segments)
    if any(s.score is None for s in segments):
        raise ValueError("temporal NMS needs scored segments")
    kept: list[Segment] = []
    for seg in sorted(segments, key=_priority):
        suppressed = any(
            k.sequence_id == seg.sequence_id
            and (not cfg.class_wise or k.class_id == seg.class_id)
            and tiou(k.interval, seg.interval) >= cfg.iou_thresh
            for k in kept)
        if not suppressed:
            kept.append(seg)
    return sorted(kept, key=_output_order)


def _subtract(interval, blockers):
    """Pieces of ``interval`` left after removing every blocker interval."""
    pieces = [interval]
    for b0, b1 in blockers:
        nxt = []
        for p0, p1 in pieces:
            if b1 <= p0 or b0 >= p1:
                nxt.append((p0, p1))
                continue
            if b0 > p0:
                nxt.append((p0, b0))
            if b1 < p1:
                nxt.append((b1, p1))
        pieces = nxt
    return pieces


def resolve_and_merge(segments: Iterable[Segment]) -> list[Segment]:
    """Make coverage single-labeled, then fuse touching same-label segments.

    Higher-confidence segments claim time first; a lower-confidence segment
    of another class keeps only what is left. Same-class pieces that touch
    or overlap are then unioned with the max score.
    """
    by_seq: dict[str, list[Segment]] = defaultdict(list)
    for seg in segments:
        if seg.score is None:
            raise ValueError("resolve_and_merge needs scored segments")
        by_seq[seg.sequence_id].append(seg)

    out: list[Segment] = []
    for seq_id in sorted(by_seq):
        claimed: list[Segment] = []
        for seg in sorted(by_seq[seq_id], key=_priority):
            blockers = [c.interval for c in claimed if c.class_id != seg.class_id]
            for p0, p1 in _subtract(seg.interval, blockers):
                if p1 > p0:
                    claimed.append(seg.replace(start=p0, end=p1))

        per_class: dict[int, list[Segment]] = defaultdict(list)
        for seg in claimed:
            per_class[seg.class_id].append(seg)
        for cid in sorted(per_class):
            pieces = sorted(per_class[cid], key=lambda s: (s.start, s.end))
            cur = pieces[0]
            for seg in pieces[1:]:
                if seg.start <= cur.end:
                    cur = cur.replace(end=max(cur.end, seg.end), score=max(cur.score, seg.score))
                else:
                    out.append(cur)
                    cur = seg
            out.append(cur)
    return sorted(out, key=_output_order)
