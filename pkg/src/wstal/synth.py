"""Synthetic continuous streams with known action segments.

A stream alternates null gaps and actions. Durations are shifted
exponentials (heavy right tail, configured mean, hard minimum) snapped to
the frame grid, so rasterizing the ground truth reproduces the generating
labels exactly. Frame features are class-conditional Gaussians: class c has
mean ``separation * e_c`` (random unit directions when D < C), null frames
have mean zero, and every subject adds its own constant offset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .core import Segment, SequenceRecord, rasterize


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 3
    fps: float = 10.0
    duration: float = 120.0
    action_mean: float | tuple[float, ...] = 6.0
    gap_mean: float = 4.0
    min_action: float = 2.0
    min_gap: float = 1.0
    feature_dim: int = 8
    separation: float = 3.0
    noise: float = 1.0
    subject_shift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.action_mean, list):
            object.__setattr__(self, "action_mean", tuple(self.action_mean))
        means = self.action_means()
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("num_classes and feature_dim must be >= 1")
        if self.fps <= 0 or self.duration <= 0:
            raise ValueError("fps and duration must be positive")
        if len(means) != self.num_classes:
            raise ValueError("need one action_mean per class")
        if self.min_action <= 0 or self.min_gap < 0 or self.gap_mean < self.min_gap:
            raise ValueError("need min_action > 0 and 0 <= min_gap <= gap_mean")
        if min(means) < self.min_action:
            raise ValueError("action_mean must be >= min_action")
        if self.separation < 0 or self.noise < 0 or self.subject_shift < 0:
            raise ValueError("separation, noise and subject_shift must be non-negative")

    def action_means(self) -> tuple[float, ...]:
        if isinstance(self.action_mean, (int, float)):
            return (float(self.action_mean),) * self.num_classes
        return tuple(float(m) for m in self.action_mean)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})

    def as_dict(self) -> dict:
        return asdict(self)


def class_means(cfg: SynthConfig) -> np.ndarray:
    """(C + 1, D) mean table; row 0 is the null class."""
    C, D = cfg.num_classes, cfg.feature_dim
    means = np.zeros((C + 1, D))
    if D >= C:
        means[1:, :C] = np.eye(C)
    else:
        # fixed directions, independent of the stream seed
        dirs = np.random.default_rng(12345).standard_normal((C, D))
        means[1:] = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return cfg.separation * means


def _frames(rng: np.random.Generator, mean: float, minimum: float, fps: float) -> int:
    """Shifted-exponential duration in whole frames, never below the minimum."""
    extra = rng.exponential(mean - minimum) if mean > minimum else 0.0
    return max(int(np.ceil(minimum * fps - 1e-9)), int(round((minimum + extra) * fps)), 1)


def sample_segments(cfg: SynthConfig, rng: np.random.Generator, sequence_id: str = "") -> list[Segment]:
    T = int(round(cfg.duration * cfg.fps))
    min_act = max(int(np.ceil(cfg.min_action * cfg.fps - 1e-9)), 1)
    min_gap = int(np.ceil(cfg.min_gap * cfg.fps - 1e-9))
    if T < min_gap + min_act:
        raise ValueError(f"duration {cfg.duration}s cannot fit a single action")
    means = cfg.action_means()
    segs: list[Segment] = []
    t = 0
    while True:
        gap = _frames(rng, cfg.gap_mean, cfg.min_gap, cfg.fps)
        c = int(rng.integers(1, cfg.num_classes + 1))
        length = _frames(rng, means[c - 1], cfg.min_action, cfg.fps)
        if not segs:
            # the first action always fits, shortening the lead gap / action if needed
            gap = min(gap, T - min_act)
            length = min(length, T - gap)
        if t + gap + length > T:
            break
        start = t + gap
        segs.append(Segment(c, start / cfg.fps, (start + length) / cfg.fps, None, sequence_id))
        t = start + length
    return segs


def gen_stream(cfg: SynthConfig, subject_offset: np.ndarray | None = None,
               sequence_id: str = "seq0", subject_id: str = "s0",
               rng: np.random.Generator | None = None) -> tuple[SequenceRecord, np.ndarray]:
    """One stream: its record (with ground truth) and the (T, D) feature matrix."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    T = int(round(cfg.duration * cfg.fps))
    duration = T / cfg.fps
    gt = sample_segments(cfg, rng, sequence_id)
    labels = rasterize(gt, cfg.fps, duration)
    feats = class_means(cfg)[labels]
    if subject_offset is not None:
        feats = feats + subject_offset
    if cfg.noise > 0:
        feats = feats + cfg.noise * rng.standard_normal(feats.shape)
    record = SequenceRecord(sequence_id, subject_id, cfg.fps, duration, cfg.feature_dim,
                            cfg.num_classes, tuple(gt))
    return record, feats


def gen_dataset(cfg: SynthConfig, subjects: int, sequences_per_subject: int = 1):
    """In-memory benchmark: list of (record, features) pairs."""
    if subjects < 2:
        raise ValueError("need at least two subjects")
    out = []
    width = len(str(subjects - 1))
    for k in range(subjects):
        subj_rng = np.random.default_rng([cfg.seed, k])
        offset = cfg.subject_shift * subj_rng.standard_normal(cfg.feature_dim)
        for m in range(sequences_per_subject):
            rng = np.random.default_rng([cfg.seed, k, m + 1])
            sid = f"subj{k:0{width}d}"
            out.append(gen_stream(cfg, offset, f"{sid}_seq{m}", sid, rng))
    return out


def write_dataset(out_dir, cfg: SynthConfig, data: Sequence[tuple[SequenceRecord, np.ndarray]],
                  extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = [r for r, _ in data]
    io.write_metadata(out / "metadata.jsonl", records)
    io.write_segments(out / "gt.jsonl", [s for r in records for s in r.gt])
    for rec, feats in data:
        io.write_features(out / "features" / f"{rec.sequence_id}.csv", feats)
    io.write_json(out / "synth_config.json", {**cfg.as_dict(), **(extra or {})})
    return out


def gen_benchmark(cfg: SynthConfig, subjects: int, sequences_per_subject: int, out_dir) -> Path:
    """Write K x M streams (metadata, gt and per-sequence features) to ``out_dir``."""
    data = gen_dataset(cfg, subjects, sequences_per_subject)
    return write_dataset(out_dir, cfg, data, {"subjects": subjects,
                                              "sequences_per_subject": sequences_per_subject})


def load_dataset(path) -> list[tuple[SequenceRecord, np.ndarray]]:
    """Read a dataset directory written by :func:`gen_benchmark`."""
    root = Path(path)
    gt = io.read_segments(root / "gt.jsonl")
    records = io.read_metadata(root / "metadata.jsonl", gt)
    out = []
    for rec in records:
        feats = io.read_features(root / "features" / f"{rec.sequence_id}.csv")
        if len(feats) != rec.num_frames:
            raise ValueError(f"{rec.sequence_id}: {len(feats)} feature rows, expected {rec.num_frames}")
        out.append((rec, feats))
    return out
