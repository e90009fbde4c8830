"""Readers and writers for the on-disk formats.

Segments are JSON Lines (``sequence_id, class_id, start, end[, score]``),
sequence metadata is JSON Lines of :class:`SequenceRecord` fields without
``gt``, frame features are headerless CSV with one row per frame.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import Segment, SequenceRecord

META_FIELDS = ("sequence_id", "subject_id", "fps", "duration", "channels", "num_classes")


def _require(path: Path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    return path


def segment_to_dict(seg: Segment) -> dict:
    out = {"sequence_id": seg.sequence_id, "class_id": seg.class_id,
           "start": seg.start, "end": seg.end}
    if seg.score is not None:
        out["score"] = seg.score
    return out


def segment_from_dict(obj: dict) -> Segment:
    score = obj.get("score")
    return Segment(class_id=int(obj["class_id"]), start=float(obj["start"]), end=float(obj["end"]),
                   score=None if score is None else float(score),
                   sequence_id=str(obj.get("sequence_id", "")))


def write_segments(path, segments: Iterable[Segment]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for seg in segments:
            fh.write(json.dumps(segment_to_dict(seg)) + "\n")


def read_segments(path) -> list[Segment]:
    out = []
    with _require(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(segment_from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad segment record: {exc}") from exc
    return out


def group_by_sequence(segments: Iterable[Segment]) -> dict[str, list[Segment]]:
    grouped: dict[str, list[Segment]] = defaultdict(list)
    for seg in segments:
        grouped[seg.sequence_id].append(seg)
    return dict(grouped)


def write_metadata(path, records: Iterable[SequenceRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps({k: getattr(rec, k) for k in META_FIELDS}) + "\n")


def read_metadata(path, gt: Iterable[Segment] = ()) -> list[SequenceRecord]:
    by_seq = group_by_sequence(gt)
    records = []
    with _require(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(SequenceRecord(
                sequence_id=str(obj["sequence_id"]), subject_id=str(obj["subject_id"]),
                fps=float(obj["fps"]), duration=float(obj["duration"]),
                channels=int(obj["channels"]), num_classes=int(obj["num_classes"]),
                gt=tuple(by_seq.get(str(obj["sequence_id"]), ()))))
    return records


def write_features(path, features: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(features, dtype=float), delimiter=",", fmt="%.17g")


def read_features(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(_require(path), delimiter=",", dtype=float, ndmin=2))


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(_require(path).read_text())
